//! Ray-traced synthetic scenes: a textured ground plane with up to three
//! spheres, exact per-pixel depth, cameras on an arc facing the center.

use geofuse_numerics::Tensor;
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CameraPose, PinholeIntrinsics, PosedImage, SceneDataset};
use crate::error::{Error, Result};

/// Depth assigned to rays that miss all geometry.
const BACKGROUND_DEPTH: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center: [f64; 3],
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CameraRig {
    /// `count` cameras on a horizontal arc of `arc_deg` degrees at `radius`
    /// from `look_at`, raised by `height`, all facing `look_at`.
    Arc {
        radius: f64,
        height: f64,
        arc_deg: f64,
        start_deg: f64,
        look_at: [f64; 3],
        count: usize,
    },
    /// Explicit camera centers and look-at points.
    Explicit { eyes: Vec<[f64; 3]>, targets: Vec<[f64; 3]> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub texture_seed: u64,
    /// Checker cells per scene unit; noise octaves start at twice this.
    pub texture_frequency: f64,
    /// Height (world y) of the ground plane, `None` for no plane.
    pub plane_height: Option<f64>,
    pub spheres: Vec<Sphere>,
    pub rig: CameraRig,
    pub width: usize,
    pub height: usize,
    pub fov_deg: f64,
    /// Rays per pixel along each axis for the color estimate. Depth always
    /// comes from the pixel-center ray.
    pub supersample: usize,
}

impl SynthSpec {
    /// Desk-scale scene: ground plane, two or three seeded spheres and a
    /// 90° arc of cameras looking down at roughly 45°. Cameras and visible
    /// geometry stay inside the `[-1, 1]³` cube.
    pub fn desk(seed: u64, views: usize, size: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5cee5);
        let plane = -0.3;
        let n_spheres = if rng.random_bool(0.5) { 2 } else { 3 };
        let mut spheres: Vec<Sphere> = Vec::new();
        while spheres.len() < n_spheres {
            let radius = rng.random_range(0.07..0.12);
            let lift = rng.random_range(0.0..0.12);
            let c = [
                rng.random_range(-0.22..0.22),
                plane + radius + lift,
                rng.random_range(-0.22..0.22),
            ];
            let clear = spheres.iter().all(|s| {
                let d: f64 = (0..3).map(|k| (s.center[k] - c[k]).powi(2)).sum::<f64>().sqrt();
                d > s.radius + radius + 0.02
            });
            if clear {
                spheres.push(Sphere { center: c, radius });
            }
        }
        SynthSpec {
            texture_seed: seed,
            texture_frequency: 8.0,
            plane_height: Some(plane),
            spheres,
            rig: CameraRig::Arc {
                radius: 0.72,
                height: 0.72,
                arc_deg: 90.0,
                start_deg: rng.random_range(0.0..360.0),
                look_at: [0.0, plane + 0.08, 0.0],
                count: views,
            },
            width: size,
            height: size,
            fov_deg: 50.0,
            supersample: 3,
        }
    }

    pub fn intrinsics(&self) -> PinholeIntrinsics {
        PinholeIntrinsics::from_fov(self.width, self.height, self.fov_deg)
    }

    pub fn poses(&self) -> Result<Vec<CameraPose>> {
        match &self.rig {
            CameraRig::Arc {
                radius,
                height,
                arc_deg,
                start_deg,
                look_at: center,
                count,
            } => {
                let target = Vector3::from(*center);
                let full = (arc_deg - 360.0).abs() < 1e-9;
                (0..*count)
                    .map(|i| {
                        let frac = if full {
                            i as f64 / *count as f64
                        } else {
                            i as f64 / (count.saturating_sub(1).max(1)) as f64
                        };
                        let theta = (start_deg + arc_deg * frac).to_radians();
                        let eye = target + Vector3::new(radius * theta.cos(), *height, radius * theta.sin());
                        look_at(&eye, &target)
                    })
                    .collect()
            }
            CameraRig::Explicit { eyes, targets } => {
                if eyes.len() != targets.len() {
                    return Err(Error::Argument(format!(
                        "{} camera centers but {} look-at points",
                        eyes.len(),
                        targets.len()
                    )));
                }
                eyes.iter()
                    .zip(targets)
                    .map(|(e, t)| look_at(&Vector3::from(*e), &Vector3::from(*t)))
                    .collect()
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 32 || self.height < 32 {
            return Err(Error::Argument(format!(
                "resolution must be at least 32×32, got {}×{}",
                self.width, self.height
            )));
        }
        let count = match &self.rig {
            CameraRig::Arc { count, .. } => *count,
            CameraRig::Explicit { eyes, .. } => eyes.len(),
        };
        if count < 8 {
            return Err(Error::Argument(format!("need at least 8 views, got {count}")));
        }
        if self.spheres.len() > 3 {
            return Err(Error::Argument("at most three spheres are supported".into()));
        }
        if self.spheres.iter().any(|s| !(s.radius > 0.0)) {
            return Err(Error::Argument("sphere radius must be positive".into()));
        }
        if self.supersample == 0 || !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(Error::Argument("supersample must be ≥ 1 and fov in (0°, 180°)".into()));
        }
        Ok(())
    }

    /// Renders every view.
    pub fn build(&self) -> Result<SceneDataset> {
        self.validate()?;
        let intrinsics = self.intrinsics();
        let texture = Texture::new(self.texture_seed, self.texture_frequency);
        let views = self
            .poses()?
            .into_iter()
            .map(|pose| self.render_view(&pose, &intrinsics, &texture))
            .collect();
        Ok(SceneDataset {
            intrinsics,
            views,
            renders: None,
        })
    }

    fn render_view(&self, pose: &CameraPose, k: &PinholeIntrinsics, tex: &Texture) -> PosedImage {
        let (w, h) = (k.width, k.height);
        let mut rgb = vec![0.0; 3 * w * h];
        let mut depth = vec![0.0; w * h];
        let s = self.supersample;
        let origin = pose.center();
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                depth[p] = self
                    .cast(&origin, &pixel_ray(pose, k, x as f64, y as f64))
                    .map_or(BACKGROUND_DEPTH, |hit| hit.t);
                let mut acc = [0.0; 3];
                for sy in 0..s {
                    for sx in 0..s {
                        let px = x as f64 + (sx as f64 + 0.5) / s as f64 - 0.5;
                        let py = y as f64 + (sy as f64 + 0.5) / s as f64 - 0.5;
                        let dir = pixel_ray(pose, k, px, py);
                        let c = match self.cast(&origin, &dir) {
                            Some(hit) => tex.shade(&hit),
                            None => [0.55, 0.62, 0.75],
                        };
                        for ch in 0..3 {
                            acc[ch] += c[ch];
                        }
                    }
                }
                for ch in 0..3 {
                    rgb[ch * w * h + p] = (acc[ch] / (s * s) as f64).clamp(0.0, 1.0);
                }
            }
        }
        PosedImage {
            rgb: Tensor::new(&[3, h, w], rgb).expect("shape"),
            depth: Some(Tensor::new(&[1, h, w], depth).expect("shape")),
            pose: *pose,
            intrinsics: *k,
        }
    }

    /// Closest intersection along `origin + t·dir`; with `dir` from
    /// [`pixel_ray`], `t` equals camera-frame depth.
    pub fn cast(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        if let Some(h) = self.plane_height {
            if dir.y.abs() > 1e-12 {
                let t = (h - origin.y) / dir.y;
                if t > 1e-9 {
                    let point = origin + dir * t;
                    best = Some(Hit {
                        t,
                        point,
                        normal: Vector3::y(),
                        surface: Surface::Plane,
                    });
                }
            }
        }
        for (i, s) in self.spheres.iter().enumerate() {
            if let Some(t) = ray_sphere(origin, dir, s) {
                if best.as_ref().is_none_or(|b| t < b.t) {
                    let point = origin + dir * t;
                    let normal = (point - Vector3::from(s.center)) / s.radius;
                    best = Some(Hit {
                        t,
                        point,
                        normal,
                        surface: Surface::Sphere(i),
                    });
                }
            }
        }
        best
    }
}

/// World-space direction of the ray through pixel `(x, y)`, scaled so its
/// camera-frame z component is 1.
pub fn pixel_ray(pose: &CameraPose, k: &PinholeIntrinsics, x: f64, y: f64) -> Vector3<f64> {
    let cam = Vector3::new((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0);
    pose.rotation.transpose() * cam
}

/// Smallest positive root of the ray/sphere quadratic.
pub fn ray_sphere(origin: &Vector3<f64>, dir: &Vector3<f64>, s: &Sphere) -> Option<f64> {
    let oc = origin - Vector3::from(s.center);
    let a = dir.dot(dir);
    let b = 2.0 * dir.dot(&oc);
    let c = oc.dot(&oc) - s.radius * s.radius;
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    // Numerically stable pair of roots.
    let q = -0.5 * (b + b.signum() * sq);
    let (mut t0, mut t1) = (q / a, if q != 0.0 { c / q } else { -b / (2.0 * a) });
    if t0 > t1 {
        std::mem::swap(&mut t0, &mut t1);
    }
    [t0, t1].into_iter().find(|&t| t > 1e-9)
}

/// World-to-camera pose at `eye` facing `target` with world +y up.
pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>) -> Result<CameraPose> {
    let fwd = target - eye;
    if fwd.norm() < 1e-12 {
        return Err(Error::Argument(format!(
            "degenerate camera: center {eye:?} coincides with its look-at point"
        )));
    }
    let fwd = fwd.normalize();
    let mut up = Vector3::y();
    if fwd.cross(&up).norm() < 1e-9 {
        // Looking straight up or down: pick a horizontal reference instead.
        up = -Vector3::z();
    }
    let right = fwd.cross(&up).normalize();
    let down = fwd.cross(&right);
    let cam_to_world = Matrix3::from_columns(&[right, down, fwd]);
    let rotation = cam_to_world.transpose();
    CameraPose::new(rotation, -(rotation * eye))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Surface {
    Plane,
    Sphere(usize),
}

#[derive(Clone, Copy, Debug)]
pub struct Hit {
    pub t: f64,
    pub point: Vector3<f64>,
    pub normal: Vector3<f64>,
    pub surface: Surface,
}

/// Stretches fBm values (which cluster around 0.5) to the full unit range.
fn contrast(v: f64) -> f64 {
    (0.5 + 2.5 * (v - 0.5)).clamp(0.0, 1.0)
}

/// View-independent procedural albedo with fixed directional lighting.
struct Texture {
    seed: u64,
    frequency: f64,
    palette: Vec<([f64; 3], [f64; 3])>,
}

impl Texture {
    fn new(seed: u64, frequency: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Each pair spans a dark and a bright colour so patterns carry
        // strong luminance edges.
        let mut pair = || {
            let dark = [0.0; 3].map(|_: f64| rng.random_range(0.02..0.3));
            let bright = [0.0; 3].map(|_: f64| rng.random_range(0.65..0.98));
            (dark, bright)
        };
        let palette = (0..4).map(|_| pair()).collect();
        Texture {
            seed,
            frequency,
            palette,
        }
    }

    fn shade(&self, hit: &Hit) -> [f64; 3] {
        let f = self.frequency;
        let p = hit.point;
        let (pair, pattern) = match hit.surface {
            Surface::Plane => {
                let checker = ((p.x * f).floor() + (p.z * f).floor()).rem_euclid(2.0);
                let noise = contrast(self.fbm(&(p * 3.0 * f)));
                (0, 0.5 * checker + 0.5 * noise)
            }
            Surface::Sphere(i) => {
                let stripes = 0.5 + 0.5 * (p.y * 6.0 * f).sin();
                let noise = contrast(self.fbm(&(p * 3.0 * f + Vector3::repeat(17.0 * (i + 1) as f64))));
                (1 + i % 3, 0.4 * stripes + 0.6 * noise)
            }
        };
        let (a, b) = self.palette[pair];
        let light = Vector3::new(0.4, 0.8, 0.3).normalize();
        let lambert = 0.55 + 0.45 * hit.normal.dot(&light).max(0.0);
        [0, 1, 2].map(|c| (a[c] + (b[c] - a[c]) * pattern) * lambert)
    }

    fn fbm(&self, p: &Vector3<f64>) -> f64 {
        let mut sum = 0.0;
        let mut amp = 0.5;
        let mut norm = 0.0;
        let mut q = *p;
        for octave in 0..3 {
            sum += amp * self.value_noise(&q, octave);
            norm += amp;
            amp *= 0.5;
            q *= 2.0;
        }
        sum / norm
    }

    fn value_noise(&self, p: &Vector3<f64>, octave: u64) -> f64 {
        let base = p.map(f64::floor);
        let frac = p - base;
        let s = frac.map(|t| t * t * (3.0 - 2.0 * t));
        let (ix, iy, iz) = (base.x as i64, base.y as i64, base.z as i64);
        let mut acc = 0.0;
        for dz in 0..2 {
            for dy in 0..2 {
                for dx in 0..2 {
                    let v = lattice(self.seed.wrapping_add(octave), ix + dx, iy + dy, iz + dz);
                    let wx = if dx == 1 { s.x } else { 1.0 - s.x };
                    let wy = if dy == 1 { s.y } else { 1.0 - s.y };
                    let wz = if dz == 1 { s.z } else { 1.0 - s.z };
                    acc += v * wx * wy * wz;
                }
            }
        }
        acc
    }
}

fn lattice(seed: u64, x: i64, y: i64, z: i64) -> f64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [x, y, z] {
        h ^= v as u64;
        h = splitmix(h);
    }
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
