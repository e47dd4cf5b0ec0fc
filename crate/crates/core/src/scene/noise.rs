//! Gaussian camera-pose noise applied to training views.

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{split_dataset, CameraPose, SceneDataset};
use crate::error::{Error, Result};
use crate::geometry::rotation_from_euler;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoseNoisePreset {
    Small,
    Medium,
    Large,
}

impl PoseNoisePreset {
    pub const ALL: [PoseNoisePreset; 3] = [Self::Small, Self::Medium, Self::Large];

    /// `(rotation σ in degrees, position σ in scene units)`.
    pub fn sigmas(self) -> (f64, f64) {
        match self {
            Self::Small => (6.25e-2, 3.125e-3),
            Self::Medium => (12.5e-2, 6.25e-3),
            Self::Large => (25e-2, 12.5e-3),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Small => "small",
            Self::Medium => "medium",
            Self::Large => "large",
        }
    }
}

impl std::str::FromStr for PoseNoisePreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(Self::Small),
            "medium" => Ok(Self::Medium),
            "large" => Ok(Self::Large),
            _ => Err(Error::Argument(format!(
                "unknown pose-noise preset {s:?} (expected small, medium or large)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseNoiseConfig {
    pub rot_sigma_deg: f64,
    pub pos_sigma: f64,
    pub seed: u64,
}

impl PoseNoiseConfig {
    pub fn preset(preset: PoseNoisePreset, seed: u64) -> Self {
        let (rot_sigma_deg, pos_sigma) = preset.sigmas();
        PoseNoiseConfig {
            rot_sigma_deg,
            pos_sigma,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(ok(self.rot_sigma_deg) && ok(self.pos_sigma)) {
            return Err(Error::Argument(format!("invalid pose-noise config {self:?}")));
        }
        Ok(())
    }

    /// `count` seeded draws of (Euler offsets in degrees `[yaw, pitch, roll]`,
    /// translation offsets). Draw `i` does not depend on `count`.
    pub fn draw_offsets(&self, count: usize) -> Vec<([f64; 3], [f64; 3])> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        // Unit normals scaled afterwards so every preset sees the same
        // underlying draws.
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        (0..count)
            .map(|_| {
                let ang = [0; 3].map(|_| self.rot_sigma_deg * unit.sample(&mut rng));
                let pos = [0; 3].map(|_| self.pos_sigma * unit.sample(&mut rng));
                (ang, pos)
            })
            .collect()
    }
}

/// Perturbs the poses of the training views (every view except 0, 8, 16,
/// …); held-out views keep their exact poses. Images and depth are
/// untouched.
pub fn perturb_poses(dataset: &SceneDataset, cfg: &PoseNoiseConfig) -> Result<SceneDataset> {
    cfg.validate()?;
    let (train, _) = split_dataset(dataset.len())?;
    let offsets = cfg.draw_offsets(dataset.len());
    let mut out = dataset.clone();
    if cfg.rot_sigma_deg == 0.0 && cfg.pos_sigma == 0.0 {
        return Ok(out);
    }
    for i in train {
        let (ang, pos) = offsets[i];
        let view = &mut out.views[i];
        let delta = rotation_from_euler(ang.map(f64::to_radians));
        view.pose = CameraPose::new(
            orthonormalize(&(delta * view.pose.rotation)),
            view.pose.translation + Vector3::from(pos),
        )?;
    }
    Ok(out)
}

/// Nearest rotation in the Frobenius sense.
pub fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    r
}

/// Geodesic angle between two rotations, in degrees.
pub fn rotation_error_deg(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let c = (((a.transpose() * b).trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    c.acos().to_degrees()
}
