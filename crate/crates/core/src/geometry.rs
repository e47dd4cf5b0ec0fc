//! Camera mathematics: Euler angles, pose distances, neighbor selection,
//! pinhole reprojection, visibility testing and depth-guided gathering.
//!
//! Throughout, `k` names the novel (target) view and `i` a neighboring
//! training view.

use std::cmp::Ordering;
use std::f64::consts::PI;

use geofuse_numerics::{Graph, Real, Tensor, Var};
use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};

use crate::error::{Error, Result};
use crate::scene::{check_rotation, CameraPose, PinholeIntrinsics};

/// Default leniency of the visibility test.
pub const DEFAULT_LENIENCY: f64 = 0.25;

/// Number of positionally closest candidates kept before the angular stage.
pub const POSITIONAL_POOL: usize = 5;

const GIMBAL_EPS: f64 = 1e-7;

/// Intrinsic Z-Y-X angles: `R = Rz(alpha) · Ry(beta) · Rx(gamma)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EulerAngles {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl EulerAngles {
    pub fn to_array(self) -> [f64; 3] {
        [self.alpha, self.beta, self.gamma]
    }

    pub fn to_rotation(self) -> Matrix3<f64> {
        rotation_from_euler(self.to_array())
    }
}

/// `Rz(a[0]) · Ry(a[1]) · Rx(a[2])`, angles in radians.
pub fn rotation_from_euler(a: [f64; 3]) -> Matrix3<f64> {
    let (sa, ca) = a[0].sin_cos();
    let (sb, cb) = a[1].sin_cos();
    let (sg, cg) = a[2].sin_cos();
    let rz = Matrix3::new(ca, -sa, 0.0, sa, ca, 0.0, 0.0, 0.0, 1.0);
    let ry = Matrix3::new(cb, 0.0, sb, 0.0, 1.0, 0.0, -sb, 0.0, cb);
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cg, -sg, 0.0, sg, cg);
    rz * ry * rx
}

pub fn euler_from_rotation(r: &Matrix3<f64>) -> Result<EulerAngles> {
    check_rotation(r)?;
    let beta = (-r[(2, 0)]).atan2((r[(0, 0)].powi(2) + r[(1, 0)].powi(2)).sqrt());
    if beta.cos().abs() < GIMBAL_EPS {
        // Only alpha ∓ gamma is determined; put it all into yaw.
        return Ok(EulerAngles {
            alpha: (-r[(0, 1)]).atan2(r[(1, 1)]),
            beta,
            gamma: 0.0,
        });
    }
    Ok(EulerAngles {
        alpha: r[(1, 0)].atan2(r[(0, 0)]),
        beta,
        gamma: r[(2, 1)].atan2(r[(2, 2)]),
    })
}

/// Wraps an angle difference into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Mean absolute wrapped difference of the Euler angles of two rotations.
pub fn dist_ang(rk: &Matrix3<f64>, ri: &Matrix3<f64>) -> Result<f64> {
    let a = euler_from_rotation(rk)?.to_array();
    let b = euler_from_rotation(ri)?.to_array();
    Ok((0..3).map(|j| wrap_angle(a[j] - b[j]).abs()).sum::<f64>() / 3.0)
}

/// Mean absolute coordinate difference of two positions.
pub fn dist_pos(tk: &Vector3<f64>, ti: &Vector3<f64>) -> f64 {
    (tk - ti).abs().sum() / 3.0
}

/// Two-stage neighbor choice: the five candidates whose camera centers are
/// closest to the novel camera's, then of those the `n` with the smallest
/// angular distance, sorted by angular distance. Ties go to the lower
/// candidate index at both stages.
pub fn select_neighbors(novel: &CameraPose, candidates: &[CameraPose], n: usize) -> Result<Vec<usize>> {
    if candidates.len() < POSITIONAL_POOL {
        return Err(Error::Argument(format!(
            "neighbor selection needs at least {POSITIONAL_POOL} candidates, got {}",
            candidates.len()
        )));
    }
    if n == 0 || n > POSITIONAL_POOL {
        return Err(Error::Argument(format!(
            "neighbor count must be in 1..={POSITIONAL_POOL}, got {n}"
        )));
    }
    let ck = novel.center();
    let mut pos: Vec<(f64, usize)> = candidates
        .iter()
        .enumerate()
        .map(|(j, c)| (dist_pos(&ck, &c.center()), j))
        .collect();
    pos.sort_by(by_distance_then_index);
    let mut ang = pos[..POSITIONAL_POOL]
        .iter()
        .map(|&(_, j)| Ok((dist_ang(&novel.rotation, &candidates[j].rotation)?, j)))
        .collect::<Result<Vec<_>>>()?;
    ang.sort_by(by_distance_then_index);
    Ok(ang[..n].iter().map(|&(_, j)| j).collect())
}

fn by_distance_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// 4×4 world-to-camera matrix.
pub fn pose_matrix(c: &CameraPose) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&c.rotation);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&c.translation);
    m
}

/// Dense `K_i C_i C_k⁻¹ K_k⁻¹` acting on `[x z, y z, z, 1]`.
fn transfer_matrix(kk: &PinholeIntrinsics, ck: &CameraPose, ki: &PinholeIntrinsics, ci: &CameraPose) -> Matrix4<f64> {
    let lift = |k: &PinholeIntrinsics| {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&k.matrix());
        m
    };
    let ck_inv = {
        let rt = ck.rotation.transpose();
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&(-(rt * ck.translation)));
        m
    };
    let kk_inv = {
        let mut m = Matrix4::identity();
        m[(0, 0)] = 1.0 / kk.fx;
        m[(1, 1)] = 1.0 / kk.fy;
        m[(0, 2)] = -kk.cx / kk.fx;
        m[(1, 2)] = -kk.cy / kk.fy;
        m
    };
    lift(ki) * pose_matrix(ci) * ck_inv * kk_inv
}

/// A pixel of the novel view expressed in a neighbor camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Reprojected {
    pub x: f64,
    pub y: f64,
    /// Depth of the point in the neighbor camera frame.
    pub z: f64,
    /// `false` when the point lies behind the neighbor camera.
    pub valid: bool,
}

/// Moves pixel `(x, y)` of camera `k` with depth `z` into camera `i`.
pub fn reproject_coord(
    x: f64,
    y: f64,
    z: f64,
    kk: &PinholeIntrinsics,
    ck: &CameraPose,
    ki: &PinholeIntrinsics,
    ci: &CameraPose,
) -> Result<Reprojected> {
    if !(z > 0.0 && z.is_finite()) {
        return Err(Error::Argument(format!("reprojection needs positive depth, got {z}")));
    }
    Ok(apply_transfer(&transfer_matrix(kk, ck, ki, ci), x, y, z))
}

fn apply_transfer(m: &Matrix4<f64>, x: f64, y: f64, z: f64) -> Reprojected {
    let p = m * Vector4::new(x * z, y * z, z, 1.0);
    let zp = p.z;
    Reprojected {
        x: p.x / zp,
        y: p.y / zp,
        z: zp,
        valid: zp > 0.0 && p.x.is_finite() && p.y.is_finite(),
    }
}

/// Per-pixel reprojection of a window of the novel view into a neighbor.
#[derive(Clone, Debug, PartialEq)]
pub struct ReprojectionGrid {
    /// `[2, H, W]` neighbor pixel coordinates, x then y.
    pub coords: Tensor<f64>,
    /// `[1, H, W]` depth of each point in the neighbor frame.
    pub zproj: Tensor<f64>,
    /// Row-major validity: in front of the neighbor and inside its image.
    pub valid: Vec<bool>,
}

impl ReprojectionGrid {
    pub fn height(&self) -> usize {
        self.coords.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.coords.shape()[2]
    }
}

/// Pixel window `(top, left, height, width)` of an image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Window {
    pub fn full(height: usize, width: usize) -> Self {
        Window {
            top: 0,
            left: 0,
            height,
            width,
        }
    }
}

pub fn reproject_map(
    depth_k: &Tensor<f64>,
    kk: &PinholeIntrinsics,
    ck: &CameraPose,
    ki: &PinholeIntrinsics,
    ci: &CameraPose,
) -> Result<ReprojectionGrid> {
    let (_, h, w) = depth_k.dims3()?;
    reproject_window(depth_k, Window::full(h, w), kk, ck, ki, ci)
}

/// [`reproject_map`] restricted to `window` of the novel view; the result
/// is identical to cropping the full map.
pub fn reproject_window(
    depth_k: &Tensor<f64>,
    window: Window,
    kk: &PinholeIntrinsics,
    ck: &CameraPose,
    ki: &PinholeIntrinsics,
    ci: &CameraPose,
) -> Result<ReprojectionGrid> {
    let (c, h, w) = depth_k.dims3()?;
    if c != 1 || window.top + window.height > h || window.left + window.width > w {
        return Err(Error::Argument(format!(
            "window {window:?} does not fit depth map of shape {:?}",
            depth_k.shape()
        )));
    }
    let m = transfer_matrix(kk, ck, ki, ci);
    let (wh, ww) = (window.height, window.width);
    let n = wh * ww;
    let mut coords = vec![0.0; 2 * n];
    let mut zproj = vec![0.0; n];
    let mut valid = vec![false; n];
    let (max_x, max_y) = ((ki.width - 1) as f64, (ki.height - 1) as f64);
    for y in 0..wh {
        for x in 0..ww {
            let (sy, sx) = (y + window.top, x + window.left);
            let z = depth_k.data()[sy * w + sx];
            let p = y * ww + x;
            if !(z > 0.0 && z.is_finite()) {
                continue;
            }
            let r = apply_transfer(&m, sx as f64, sy as f64, z);
            coords[p] = r.x;
            coords[n + p] = r.y;
            zproj[p] = r.z;
            valid[p] = r.valid && (0.0..=max_x).contains(&r.x) && (0.0..=max_y).contains(&r.y);
        }
    }
    Ok(ReprojectionGrid {
        coords: Tensor::new(&[2, wh, ww], coords)?,
        zproj: Tensor::new(&[1, wh, ww], zproj)?,
        valid,
    })
}

/// Bilinear sample of a single-channel map at a continuous position; taps
/// outside the map read zero.
pub fn sample_bilinear(map: &Tensor<f64>, x: f64, y: f64) -> f64 {
    let (_, h, w) = (map.shape()[0], map.shape()[1], map.shape()[2]);
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let at = |xi: f64, yi: f64| {
        if xi < 0.0 || yi < 0.0 || xi >= w as f64 || yi >= h as f64 {
            0.0
        } else {
            map.data()[yi as usize * w + xi as usize]
        }
    };
    (1.0 - fy) * ((1.0 - fx) * at(x0, y0) + fx * at(x0 + 1.0, y0))
        + fy * ((1.0 - fx) * at(x0, y0 + 1.0) + fx * at(x0 + 1.0, y0 + 1.0))
}

/// Binary `[1, H, W]` mask: 1 where `1 − z_{k→i}/z_i + leniency ≥ 0` with
/// `z_i` sampled bilinearly from the neighbor depth, 0 where invalid.
pub fn visibility(grid: &ReprojectionGrid, depth_i: &Tensor<f64>, leniency: f64) -> Result<Tensor<f64>> {
    if !(leniency >= 0.0) {
        return Err(Error::Argument(format!("leniency must be ≥ 0, got {leniency}")));
    }
    let (c, _, _) = depth_i.dims3()?;
    if c != 1 {
        return Err(Error::Argument("neighbor depth must have one channel".into()));
    }
    let (h, w) = (grid.height(), grid.width());
    let n = h * w;
    let mut mask = vec![0.0; n];
    for p in 0..n {
        if !grid.valid[p] {
            continue;
        }
        let zi = sample_bilinear(depth_i, grid.coords.data()[p], grid.coords.data()[n + p]);
        let zk = grid.zproj.data()[p];
        if zi > 0.0 && 1.0 - zk / zi + leniency >= 0.0 {
            mask[p] = 1.0;
        }
    }
    Ok(Tensor::new(&[1, h, w], mask)?)
}

/// Samples neighbor features and depth at the grid coordinates and zeroes
/// everything the mask rejects. Returns `(features, depth)`.
pub fn gather_aligned<T: Real>(
    features: &Tensor<T>,
    depth_i: &Tensor<T>,
    grid: &ReprojectionGrid,
    mask: &Tensor<f64>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let mut g = Graph::new();
    let grid_v = g.constant(grid.coords.cast());
    let mask_v = g.constant(mask.cast());
    let f = g.constant(features.clone());
    let d = g.constant(depth_i.clone());
    let f = gather_var(&mut g, f, grid_v, mask_v)?;
    let d = gather_var(&mut g, d, grid_v, mask_v)?;
    Ok((g.value(f).clone(), g.value(d).clone()))
}

/// Differentiable form of [`gather_aligned`] for one map.
pub fn gather_var<T: Real>(g: &mut Graph<T>, map: Var, grid: Var, mask: Var) -> Result<Var> {
    let sampled = g.grid_sample(map, grid)?;
    Ok(g.mul_map(sampled, mask)?)
}
