//! Held-out evaluation and the pose-noise robustness sweep.

use geofuse_numerics::ParamSet;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::metrics::{psnr, ssim};
use crate::pipeline::{enhance_view, ModelConfig};
use crate::scene::{perturb_poses, PoseNoiseConfig, PoseNoisePreset, SceneDataset};
use crate::train::{fit, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewMetrics {
    pub index: usize,
    pub psnr_in: f64,
    pub psnr_out: f64,
    pub ssim_in: f64,
    pub ssim_out: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub psnr_in: f64,
    pub psnr_out: f64,
    pub ssim_in: f64,
    pub ssim_out: f64,
}

impl MeanMetrics {
    pub fn psnr_gain(&self) -> f64 {
        self.psnr_out - self.psnr_in
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_view: Vec<ViewMetrics>,
    pub mean: MeanMetrics,
    pub config: ModelConfig,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Enhances every held-out view (0, 8, 16, …) and scores degraded input and
/// enhanced output against ground truth.
pub fn evaluate_scene(scene: &SceneDataset, params: &ParamSet<f32>, cfg: &ModelConfig) -> Result<MetricsReport> {
    let (_, test) = scene.split()?;
    let per_view = test
        .iter()
        .map(|&index| {
            scene.depth(index)?;
            let gt = &scene.views[index].rgb;
            let input = scene.render(index)?;
            let out = enhance_view(scene, index, params, cfg)?;
            Ok(ViewMetrics {
                index,
                psnr_in: psnr(input, gt)?,
                psnr_out: psnr(&out, gt)?,
                ssim_in: ssim(input, gt)?,
                ssim_out: ssim(&out, gt)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = per_view.len() as f64;
    let mean = |f: fn(&ViewMetrics) -> f64| per_view.iter().map(f).sum::<f64>() / n;
    Ok(MetricsReport {
        mean: MeanMetrics {
            psnr_in: mean(|v| v.psnr_in),
            psnr_out: mean(|v| v.psnr_out),
            ssim_in: mean(|v| v.ssim_in),
            ssim_out: mean(|v| v.ssim_out),
        },
        per_view,
        config: *cfg,
    })
}

/// One row of the robustness sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    /// `"none"` or the preset name.
    pub noise: String,
    pub report: MetricsReport,
}

/// Trains from scratch and evaluates once per noise level: exact poses,
/// then each preset applied to the training poses with the same noise
/// seed.
pub fn noise_sweep(scene: &SceneDataset, cfg: &TrainConfig, noise_seed: u64) -> Result<Vec<SweepEntry>> {
    let levels = std::iter::once(None).chain(PoseNoisePreset::ALL.into_iter().map(Some));
    let mut out = Vec::new();
    for level in levels {
        let noisy = match level {
            None => scene.clone(),
            Some(p) => perturb_poses(scene, &PoseNoiseConfig::preset(p, noise_seed))?,
        };
        let (params, _) = fit(&[&noisy], None, cfg)?;
        out.push(SweepEntry {
            noise: level.map_or("none", |p| p.name()).to_string(),
            report: evaluate_scene(&noisy, &params, &cfg.model)?,
        });
    }
    Ok(out)
}
