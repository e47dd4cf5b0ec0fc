use geofuse_numerics::{Graph, Real, Tensor, Var};

use super::Layers;
use crate::error::{Error, Result};
use crate::geometry::euler_from_rotation;
use crate::scene::CameraPose;

/// Maps positive depth into `[0, 1)` as `d / (1 + d)`.
pub fn normalize_depth(depth: &Tensor<f64>) -> Tensor<f64> {
    depth.map(|d| if d > 0.0 { d / (1.0 + d) } else { 0.0 })
}

/// Per-pixel weight `[1, H, W]` in `(0, 1)` from the aligned neighbor
/// features, render features and both (normalized) depth maps.
pub fn pixel_attention<T: Real>(
    g: &mut Graph<T>,
    layers: &mut Layers<T>,
    neighbor: Var,
    render: Var,
    depth_ik: Var,
    depth_k: Var,
) -> Result<Var> {
    let x = g.concat(&[neighbor, render, depth_ik, depth_k])?;
    let c = g.value(x).shape()[0];
    if c != 130 {
        return Err(Error::Argument(format!("pixel attention expects 130 input channels, got {c}")));
    }
    let x = layers.conv(g, "att_pix.conv1", x, 1)?;
    let x = g.leaky_relu(x);
    let x = layers.conv(g, "att_pix.conv2", x, 1)?;
    Ok(g.sigmoid(x))
}

/// The 12-vector `[π(R_i), π(R_k), c_i, c_k]` of Euler angles and camera
/// centers fed to [`camera_attention`].
pub fn camera_input(neighbor: &CameraPose, novel: &CameraPose) -> Result<Tensor<f64>> {
    let ei = euler_from_rotation(&neighbor.rotation)?.to_array();
    let ek = euler_from_rotation(&novel.rotation)?.to_array();
    let (ci, ck) = (neighbor.center(), novel.center());
    let mut v = Vec::with_capacity(12);
    v.extend(ei);
    v.extend(ek);
    v.extend(ci.iter());
    v.extend(ck.iter());
    Ok(Tensor::new(&[12], v)?)
}

/// Scalar weight `[1]` in `(0, 1)` for one neighbor from the camera input.
pub fn camera_attention<T: Real>(g: &mut Graph<T>, layers: &mut Layers<T>, input: Var) -> Result<Var> {
    if g.value(input).shape() != [12] {
        return Err(Error::Argument(format!(
            "camera attention expects a 12-vector, got shape {:?}",
            g.value(input).shape()
        )));
    }
    let x = layers.linear(g, "att_cam.fc1", input)?;
    let x = g.leaky_relu(x);
    let x = layers.linear(g, "att_cam.fc2", x)?;
    Ok(g.sigmoid(x))
}

/// `ψ_cam · ψ_pix · features`, the pixel weight broadcast over channels.
pub fn apply_attention<T: Real>(g: &mut Graph<T>, features: Var, psi_pix: Var, psi_cam: Var) -> Result<Var> {
    let x = g.mul_map(features, psi_pix)?;
    Ok(g.mul_scalar(x, psi_cam)?)
}

/// Elementwise maximum over the neighbor set.
pub fn fuse<T: Real>(g: &mut Graph<T>, neighbors: &[Var]) -> Result<Var> {
    if neighbors.is_empty() {
        return Err(Error::Argument("cannot fuse an empty neighbor set".into()));
    }
    Ok(g.set_max(neighbors)?)
}

/// Merges render features with the pooled neighbor features and decodes an
/// RGB image of the input size. Inputs are reflect-padded to a multiple of
/// four for the two stride-2 stages and the output is cropped back. With
/// `residual`, the given image is added to the output. The result is not
/// clamped.
pub fn enhance_backbone<T: Real>(
    g: &mut Graph<T>,
    layers: &mut Layers<T>,
    render_features: Var,
    pooled: Var,
    residual: Option<Var>,
) -> Result<Var> {
    let (_, h, w) = g.value(render_features).dims3()?;
    let (_, hp, wp) = g.value(pooled).dims3()?;
    if (h, w) != (hp, wp) {
        return Err(Error::Argument(format!(
            "render features are {h}×{w} but pooled features are {hp}×{wp}"
        )));
    }
    let x = g.concat(&[render_features, pooled])?;
    let (ph, pw) = (h.next_multiple_of(4) - h, w.next_multiple_of(4) - w);
    let x = if ph + pw > 0 { g.reflect_pad(x, h + ph, w + pw)? } else { x };

    let x0 = layers.conv(g, "merge", x, 1)?;
    let x0 = g.leaky_relu(x0);
    let e1 = layers.conv(g, "backbone.enc1", x0, 2)?;
    let e1 = g.leaky_relu(e1);
    let e2 = layers.conv(g, "backbone.enc2", e1, 2)?;
    let e2 = g.leaky_relu(e2);
    let b = layers.conv(g, "backbone.mid1", e2, 1)?;
    let b = g.leaky_relu(b);
    let b = layers.conv(g, "backbone.mid2", b, 1)?;
    let b = g.leaky_relu(b);
    let up = g.upsample_nearest(b, 2)?;
    let d1 = layers.conv(g, "backbone.dec1", up, 1)?;
    let d1 = g.leaky_relu(d1);
    let d1 = g.add(d1, e1)?;
    let up = g.upsample_nearest(d1, 2)?;
    let up = g.add(up, x0)?;
    let d0 = layers.conv(g, "backbone.dec0", up, 1)?;
    let d0 = g.leaky_relu(d0);
    let out = layers.conv(g, "backbone.out", d0, 1)?;
    let out = if ph + pw > 0 { g.crop(out, 0, 0, h, w)? } else { out };
    Ok(match residual {
        Some(r) => g.add(out, r)?,
        None => out,
    })
}
