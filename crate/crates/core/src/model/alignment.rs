use geofuse_numerics::{Graph, Real, Tensor, Var};

use super::Layers;
use crate::error::{Error, Result};

/// Resolution reduction of the flow estimator.
pub const FLOW_DOWNSAMPLE: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Encoder {
    Render,
    Neighbor,
}

impl Encoder {
    fn prefix(self) -> &'static str {
        match self {
            Encoder::Render => "enc_render",
            Encoder::Neighbor => "enc_neighbor",
        }
    }
}

/// Full-resolution 64-channel features of an RGB image.
pub fn encode<T: Real>(g: &mut Graph<T>, layers: &mut Layers<T>, which: Encoder, image: Var) -> Result<Var> {
    let (c, _, _) = g.value(image).dims3()?;
    if c != 3 {
        return Err(Error::Argument(format!("encoder expects 3 channels, got {c}")));
    }
    let p = which.prefix();
    let x = layers.conv(g, &format!("{p}.conv1"), image, 1)?;
    let x = g.leaky_relu(x);
    let x = layers.conv(g, &format!("{p}.conv2"), x, 1)?;
    let x = g.leaky_relu(x);
    Ok(layers.conv(g, &format!("{p}.conv3"), x, 1)?)
}

/// Samples `features` at `(x + dx, y + dy)` for every output pixel, with
/// zero padding outside the map.
pub fn warp2d<T: Real>(g: &mut Graph<T>, features: Var, flow: Var) -> Result<Var> {
    let (_, h, w) = g.value(features).dims3()?;
    if g.value(flow).shape() != [2, h, w] {
        return Err(Error::Argument(format!(
            "flow shape {:?} does not match features {h}×{w}",
            g.value(flow).shape()
        )));
    }
    let base = g.constant(base_grid(h, w));
    let grid = g.add(base, flow)?;
    Ok(g.grid_sample(features, grid)?)
}

/// Identity sampling grid `[2, H, W]`.
pub(crate) fn base_grid<T: Real>(h: usize, w: usize) -> Tensor<T> {
    Tensor::from_fn(&[2, h, w], |i| {
        let p = i % (h * w);
        if i < h * w {
            T::of((p % w) as f64)
        } else {
            T::of((p / w) as f64)
        }
    })
}

/// Full-resolution flow `[2, H, W]` that aligns `source` (3D-gathered
/// neighbor features) to `target` (render features). The estimate lives at
/// 1/8 resolution, starts at zero and is refined `iters` times by warping
/// the source with the current flow and predicting an increment.
pub fn estimate_flow<T: Real>(
    g: &mut Graph<T>,
    layers: &mut Layers<T>,
    source: Var,
    target: Var,
    iters: usize,
) -> Result<Var> {
    let (cs, h, w) = g.value(source).dims3()?;
    let (ct, ht, wt) = g.value(target).dims3()?;
    if (h, w) != (ht, wt) || cs + ct != 128 {
        return Err(Error::Argument(format!(
            "flow inputs must be two 64-channel maps of equal size, got {:?} and {:?}",
            g.value(source).shape(),
            g.value(target).shape()
        )));
    }
    let low = |n: usize| n.div_ceil(2).div_ceil(2).div_ceil(2);
    let (hl, wl) = (low(h), low(w));
    let scale = T::of(FLOW_DOWNSAMPLE as f64);
    let mut flow_low = g.constant(Tensor::zeros(&[2, hl, wl]));
    let mut flow_full = None;
    for _ in 0..iters {
        let warped = match flow_full {
            // Zero flow samples every pixel exactly; skip the warp.
            None => source,
            Some(f) => warp2d(g, source, f)?,
        };
        let x = g.concat(&[warped, target])?;
        let x = layers.conv(g, "flow.head1", x, 2)?;
        let x = g.leaky_relu(x);
        let x = layers.conv(g, "flow.head2", x, 2)?;
        let x = g.leaky_relu(x);
        let x = layers.conv(g, "flow.head3", x, 2)?;
        let x = g.leaky_relu(x);
        let x = g.concat(&[x, flow_low])?;
        let x = layers.conv(g, "flow.update1", x, 1)?;
        let x = g.leaky_relu(x);
        let x = layers.conv(g, "flow.update2", x, 1)?;
        let x = g.leaky_relu(x);
        let delta = layers.conv(g, "flow.update3", x, 1)?;
        flow_low = g.add(flow_low, delta)?;
        flow_full = Some(g.resize_bilinear(flow_low, h, w, scale)?);
    }
    Ok(match flow_full {
        Some(f) => f,
        None => g.constant(Tensor::zeros(&[2, h, w])),
    })
}
