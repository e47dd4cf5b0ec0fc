//! Independent oracles shared by the integration tests and the acceptance
//! harness. Nothing here calls the library routine it is used to check.
#![allow(dead_code)]

use geofuse::geometry::{gather_aligned, reproject_map, visibility, DEFAULT_LENIENCY};
use geofuse::scene::{CameraPose, CameraRig, PinholeIntrinsics, SceneDataset, Sphere, SynthSpec};
use nalgebra::{Matrix3, Matrix4, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two spheres over a ground plane seen from a 12-camera arc, with a low
/// texture frequency so bilinear resampling between views stays accurate.
pub fn sphere_scene(size: usize) -> SynthSpec {
    SynthSpec {
        texture_seed: 7,
        texture_frequency: 2.0,
        plane_height: Some(-0.3),
        spheres: vec![
            Sphere {
                center: [0.0, -0.12, 0.0],
                radius: 0.18,
            },
            Sphere {
                center: [0.2, -0.2, 0.15],
                radius: 0.1,
            },
        ],
        rig: CameraRig::Arc {
            radius: 0.8,
            height: 0.6,
            arc_deg: 60.0,
            start_deg: 20.0,
            look_at: [0.0, -0.2, 0.0],
            count: 12,
        },
        width: size,
        height: size,
        fov_deg: 50.0,
        supersample: 3,
    }
}

/// Camera center `−Rᵀt`, written out per component.
pub fn center(p: &CameraPose) -> Vector3<f64> {
    let r = p.rotation;
    let t = p.translation;
    Vector3::new(
        -(r[(0, 0)] * t.x + r[(1, 0)] * t.y + r[(2, 0)] * t.z),
        -(r[(0, 1)] * t.x + r[(1, 1)] * t.y + r[(2, 1)] * t.z),
        -(r[(0, 2)] * t.x + r[(1, 2)] * t.y + r[(2, 2)] * t.z),
    )
}

/// World direction through pixel `(x, y)` with unit camera-frame depth.
fn ray_dir(p: &CameraPose, k: &PinholeIntrinsics, x: f64, y: f64) -> Vector3<f64> {
    let cam = Vector3::new((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0);
    let r = p.rotation;
    Vector3::new(
        r[(0, 0)] * cam.x + r[(1, 0)] * cam.y + r[(2, 0)] * cam.z,
        r[(0, 1)] * cam.x + r[(1, 1)] * cam.y + r[(2, 1)] * cam.z,
        r[(0, 2)] * cam.x + r[(1, 2)] * cam.y + r[(2, 2)] * cam.z,
    )
}

/// Camera-frame depth of the first surface behind pixel `(x, y)`, by the
/// textbook quadratic formula and ray/plane division.
pub fn oracle_depth(spec: &SynthSpec, p: &CameraPose, k: &PinholeIntrinsics, x: f64, y: f64) -> Option<f64> {
    let o = center(p);
    let d = ray_dir(p, k, x, y);
    let mut best: Option<f64> = None;
    let mut keep = |t: f64| {
        if t > 1e-9 && best.is_none_or(|b| t < b) {
            best = Some(t);
        }
    };
    if let Some(h) = spec.plane_height {
        if d.y != 0.0 {
            keep((h - o.y) / d.y);
        }
    }
    for s in &spec.spheres {
        let c = Vector3::from(s.center);
        let a = d.norm_squared();
        let b = 2.0 * d.dot(&(o - c));
        let cc = (o - c).norm_squared() - s.radius * s.radius;
        let disc = b * b - 4.0 * a * cc;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            let (t0, t1) = ((-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a));
            if t0 > 1e-9 {
                keep(t0);
            } else {
                keep(t1);
            }
        }
    }
    best
}

/// Whether a world point lies strictly inside scene geometry.
fn inside_solid(spec: &SynthSpec, p: &Vector3<f64>) -> bool {
    if spec.plane_height.is_some_and(|h| p.y < h) {
        return true;
    }
    spec.spheres
        .iter()
        .any(|s| (p - Vector3::from(s.center)).norm() < s.radius)
}

/// Brute-force occlusion test: marches `steps` samples along the segment
/// from the camera center to `point` and reports the point visible unless
/// some sample before it (excluding a `margin` fraction at the end, where
/// the surface itself lives) is inside geometry.
pub fn ray_march_visible(spec: &SynthSpec, cam: &CameraPose, point: &Vector3<f64>, steps: usize, margin: f64) -> bool {
    let o = center(cam);
    (1..steps).all(|j| {
        let s = j as f64 / steps as f64 * (1.0 - margin);
        !inside_solid(spec, &(o + (point - o) * s))
    })
}

/// Stepwise unproject → world → neighbor → project.
pub fn oracle_reproject(
    x: f64,
    y: f64,
    z: f64,
    kk: &PinholeIntrinsics,
    ck: &CameraPose,
    ki: &PinholeIntrinsics,
    ci: &CameraPose,
) -> (f64, f64, f64) {
    let cam_k = Vector3::new((x - kk.cx) / kk.fx * z, (y - kk.cy) / kk.fy * z, z);
    let world = ck.rotation.transpose() * (cam_k - ck.translation);
    let cam_i = ci.rotation * world + ci.translation;
    (
        ki.fx * cam_i.x / cam_i.z + ki.cx,
        ki.fy * cam_i.y / cam_i.z + ki.cy,
        cam_i.z,
    )
}

/// Dense 4×4 product `K_i C_i C_k⁻¹ K_k⁻¹` built with general inverses.
pub fn dense_transfer(kk: &PinholeIntrinsics, ck: &CameraPose, ki: &PinholeIntrinsics, ci: &CameraPose) -> Matrix4<f64> {
    let k4 = |k: &PinholeIntrinsics| {
        let mut m = Matrix4::identity();
        m[(0, 0)] = k.fx;
        m[(1, 1)] = k.fy;
        m[(0, 2)] = k.cx;
        m[(1, 2)] = k.cy;
        m
    };
    let c4 = |c: &CameraPose| {
        let mut m = Matrix4::identity();
        for r in 0..3 {
            for col in 0..3 {
                m[(r, col)] = c.rotation[(r, col)];
            }
            m[(r, 3)] = c.translation[r];
        }
        m
    };
    k4(ki) * c4(ci) * c4(ck).try_inverse().unwrap() * k4(kk).try_inverse().unwrap()
}

pub fn apply_dense(m: &Matrix4<f64>, x: f64, y: f64, z: f64) -> (f64, f64, f64) {
    let p = m * Vector4::new(x * z, y * z, z, 1.0);
    (p.x / p.z, p.y / p.z, p.z)
}

/// Z-Y-X angles by the arcsine formula.
pub fn oracle_euler(r: &Matrix3<f64>) -> [f64; 3] {
    let beta = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
    [r[(1, 0)].atan2(r[(0, 0)]), beta, r[(2, 1)].atan2(r[(2, 2)])]
}

fn wrapped_abs(d: f64) -> f64 {
    let m = d.rem_euclid(2.0 * std::f64::consts::PI);
    m.min(2.0 * std::f64::consts::PI - m)
}

pub fn oracle_dist_ang(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let (ea, eb) = (oracle_euler(a), oracle_euler(b));
    (0..3).map(|j| wrapped_abs(ea[j] - eb[j])).sum::<f64>() / 3.0
}

pub fn oracle_dist_pos(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    ((a.x - b.x).abs() + (a.y - b.y).abs() + (a.z - b.z).abs()) / 3.0
}

/// Exhaustive two-stage selection: a candidate enters the positional pool
/// when fewer than five others beat it on (distance, index); the pool is
/// then ranked the same way on angular distance.
pub fn oracle_select(novel: &CameraPose, cands: &[CameraPose], n: usize) -> Vec<usize> {
    let ck = center(novel);
    let pos: Vec<f64> = cands.iter().map(|c| oracle_dist_pos(&ck, &center(c))).collect();
    let beats = |d: &[f64], a: usize, b: usize| d[a] < d[b] || (d[a] == d[b] && a < b);
    let pool: Vec<usize> = (0..cands.len())
        .filter(|&j| (0..cands.len()).filter(|&o| o != j && beats(&pos, o, j)).count() < 5)
        .collect();
    let mut ang = vec![f64::INFINITY; cands.len()];
    for &j in &pool {
        ang[j] = oracle_dist_ang(&novel.rotation, &cands[j].rotation);
    }
    let mut out = vec![usize::MAX; n];
    for &j in &pool {
        let rank = pool.iter().filter(|&&o| o != j && beats(&ang, o, j)).count();
        if rank < n {
            out[rank] = j;
        }
    }
    out
}

/// Random look-at camera in a unit-scale box.
pub fn random_pose(rng: &mut ChaCha8Rng) -> CameraPose {
    loop {
        let eye = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let target = Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
        if (eye - target).norm() > 0.2 {
            return geofuse::scene::look_at(&eye, &target).unwrap();
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mean absolute RGB error of neighbor images warped into the novel view
/// through exact depth, over co-visible surface pixels of three view pairs
/// of [`sphere_scene`]. Returns `(mae, samples)`.
pub fn photometric_round_trip(data: &SceneDataset) -> (f64, usize) {
    let k = data.intrinsics;
    let n = k.width * k.height;
    let (mut total, mut count) = (0.0, 0usize);
    for (vk, vi) in [(3, 4), (6, 5), (8, 9)] {
        let dk = data.depth(vk).unwrap();
        let grid = reproject_map(dk, &k, &data.views[vk].pose, &k, &data.views[vi].pose).unwrap();
        let depth_i = data.depth(vi).unwrap();
        let mask = visibility(&grid, depth_i, DEFAULT_LENIENCY).unwrap();
        let (warped, _) = gather_aligned(&data.views[vi].rgb, depth_i, &grid, &mask).unwrap();
        let gt = &data.views[vk].rgb;
        for p in 0..n {
            if mask.data()[p] > 0.0 && dk.data()[p] < 100.0 {
                for c in 0..3 {
                    total += (warped.data()[c * n + p] - gt.data()[c * n + p]).abs();
                }
                count += 3;
            }
        }
    }
    (total / count as f64, count)
}

/// Fraction of valid surface pixels where the visibility mask agrees with a
/// ray-marched occlusion test, over four view pairs. A point passes the
/// lenient test exactly when no surface crosses the neighbor's ray in front
/// of depth `z / (1 + l)`, so the march stops there (plus a 1e-3 guard
/// against hitting the point's own surface). Returns `(fraction, pixels)`.
pub fn visibility_agreement(spec: &SynthSpec, data: &SceneDataset, leniency: f64) -> (f64, usize) {
    let k = data.intrinsics;
    let n = k.width * k.height;
    let (mut agree, mut total) = (0usize, 0usize);
    for (vk, vi) in [(0, 3), (5, 9), (11, 6), (2, 1)] {
        let dk = data.depth(vk).unwrap();
        let (ck, ci) = (&data.views[vk].pose, &data.views[vi].pose);
        let grid = reproject_map(dk, &k, ck, &k, ci).unwrap();
        let mask = visibility(&grid, data.depth(vi).unwrap(), leniency).unwrap();
        for p in 0..n {
            let z = dk.data()[p];
            if !grid.valid[p] || z >= 100.0 {
                continue;
            }
            let (x, y) = ((p % k.width) as f64, (p / k.width) as f64);
            let cam = Vector3::new((x - k.cx) / k.fx * z, (y - k.cy) / k.fy * z, z);
            let world = ck.to_world(&cam);
            let visible = ray_march_visible(spec, ci, &world, 2000, 1.0 - 1.0 / (1.0 + leniency) + 1e-3);
            agree += usize::from(visible == (mask.data()[p] > 0.0));
            total += 1;
        }
    }
    (agree as f64 / total as f64, total)
}
