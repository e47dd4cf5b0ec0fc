//! Posed image data model, synthetic scenes, degradation, pose noise and the
//! on-disk scene directory format.

mod degrade;
mod io;
mod noise;
mod synth;

pub use degrade::{degrade, gaussian_blur, DegradationConfig};
pub use io::{load_scene, read_pfm, read_png, save_scene, write_pfm, write_png, CAMERAS_FILE, SCENE_VERSION};
pub use noise::{perturb_poses, rotation_error_deg, PoseNoiseConfig, PoseNoisePreset};
pub use synth::{look_at, CameraRig, Sphere, SynthSpec};

use geofuse_numerics::Tensor;
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Orthonormality and determinant tolerance of a valid rotation.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PinholeIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl PinholeIntrinsics {
    /// Square pixels, principal point at the image center, horizontal field
    /// of view in degrees.
    pub fn from_fov(width: usize, height: usize, fov_deg: f64) -> Self {
        let fx = 0.5 * width as f64 / (0.5 * fov_deg.to_radians()).tan();
        PinholeIntrinsics {
            fx,
            fy: fx,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if !ok {
            return Err(Error::Argument(format!("invalid intrinsics {self:?}")));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

/// World-to-camera rigid transform `x_cam = R x_world + t`. The camera looks
/// down +z with image x to the right and image y down.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraPose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl CameraPose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let pose = CameraPose {
            rotation,
            translation,
        };
        pose.validate()?;
        Ok(pose)
    }

    pub fn identity() -> Self {
        CameraPose {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_rotation(&self.rotation)?;
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(Error::Argument("translation is not finite".into()));
        }
        Ok(())
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn to_camera(&self, world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * world + self.translation
    }

    pub fn to_world(&self, cam: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (cam - self.translation)
    }
}

pub fn check_rotation(r: &Matrix3<f64>) -> Result<()> {
    if !r.iter().all(|v| v.is_finite()) {
        return Err(Error::Argument("rotation has non-finite entries".into()));
    }
    let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
    let det = r.determinant();
    if ortho > ROTATION_TOLERANCE || (det - 1.0).abs() > ROTATION_TOLERANCE {
        return Err(Error::Argument(format!(
            "rotation is not orthonormal (|RᵀR − I| = {ortho:.3e}, det = {det:.12})"
        )));
    }
    Ok(())
}

/// One captured view: RGB `[3, H, W]` in `[0, 1]`, depth `[1, H, W]` as
/// camera-frame z.
#[derive(Clone, Debug, PartialEq)]
pub struct PosedImage {
    pub rgb: Tensor<f64>,
    pub depth: Option<Tensor<f64>>,
    pub pose: CameraPose,
    pub intrinsics: PinholeIntrinsics,
}

impl PosedImage {
    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        self.pose.validate()?;
        let (h, w) = (self.height(), self.width());
        if self.rgb.shape() != [3, h, w] {
            return Err(Error::Argument(format!(
                "rgb shape {:?} does not match {h}×{w} intrinsics",
                self.rgb.shape()
            )));
        }
        if self.rgb.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Argument("rgb values outside [0, 1]".into()));
        }
        if let Some(d) = &self.depth {
            if d.shape() != [1, h, w] {
                return Err(Error::Argument(format!("depth shape {:?} does not match {h}×{w}", d.shape())));
            }
            if d.data().iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::Argument("depth must be finite and positive".into()));
            }
        }
        Ok(())
    }
}

/// Ordered posed views plus, optionally, a degraded render per view.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneDataset {
    pub intrinsics: PinholeIntrinsics,
    pub views: Vec<PosedImage>,
    pub renders: Option<Vec<Tensor<f64>>>,
}

impl SceneDataset {
    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn depth(&self, view: usize) -> Result<&Tensor<f64>> {
        self.views
            .get(view)
            .and_then(|v| v.depth.as_ref())
            .ok_or(Error::MissingDepth { view })
    }

    pub fn render(&self, view: usize) -> Result<&Tensor<f64>> {
        self.renders
            .as_ref()
            .and_then(|r| r.get(view))
            .ok_or(Error::MissingRender { view })
    }

    pub fn poses(&self) -> Vec<CameraPose> {
        self.views.iter().map(|v| v.pose).collect()
    }

    /// Degrades every view with a per-view seed derived from `cfg.seed` and
    /// stores the results as the scene's renders.
    pub fn with_degraded_renders(mut self, cfg: &DegradationConfig) -> Result<Self> {
        let renders = self
            .views
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let view_cfg = DegradationConfig {
                    seed: cfg.seed.wrapping_add(i as u64 * 0x9e37_79b9),
                    ..*cfg
                };
                degrade(v, &view_cfg).map(|d| d.rgb)
            })
            .collect::<Result<Vec<_>>>()?;
        self.renders = Some(renders);
        Ok(self)
    }

    pub fn split(&self) -> Result<(Vec<usize>, Vec<usize>)> {
        split_dataset(self.len())
    }
}

/// Every eighth view (0, 8, 16, …) is a test view, the rest train.
pub fn split_dataset(count: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if count < 8 {
        return Err(Error::Argument(format!(
            "a dataset needs at least 8 views to hold out a test view, got {count}"
        )));
    }
    let (test, train): (Vec<usize>, Vec<usize>) = (0..count).partition(|i| i % 8 == 0);
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_twenty_views() {
        let (train, test) = split_dataset(20).unwrap();
        assert_eq!(test, vec![0, 8, 16]);
        assert_eq!(train.len(), 17);
        assert_eq!(split_dataset(8).unwrap().1, vec![0]);
        assert!(split_dataset(7).is_err());
    }

    #[test]
    fn split_partitions_every_size() {
        for n in 8..=64 {
            let (train, test) = split_dataset(n).unwrap();
            let mut all: Vec<_> = train.iter().chain(&test).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
            assert!(train.iter().all(|i| !test.contains(i)));
        }
    }

    #[test]
    fn rotation_check_rejects_scaling() {
        assert!(check_rotation(&Matrix3::identity()).is_ok());
        assert!(check_rotation(&(Matrix3::identity() * 1.001)).is_err());
        let reflect = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(check_rotation(&reflect).is_err());
    }
}
