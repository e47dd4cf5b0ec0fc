//! Pre-training and fine-tuning on random aligned crops of render/ground
//! truth pairs, with best-checkpoint selection on held-out training views.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::{Duration, Instant};

use geofuse_numerics::{adam_step, AdamConfig, AdamState, Graph, ParamSet, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Window;
use crate::loss::{loss, loss_value, PerceptualStack, PERCEPTUAL_WEIGHT};
use crate::model::{init_params, Layers};
use crate::pipeline::{crop, enhance_prepared, forward, prepare_view, ModelConfig, PreparedView};
use crate::scene::SceneDataset;

/// Training length: a fixed number of optimizer steps (reproducible) or a
/// wall-clock allowance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    Steps(u64),
    Seconds(f64),
}

impl Budget {
    pub fn is_zero(&self) -> bool {
        match *self {
            Budget::Steps(n) => n == 0,
            Budget::Seconds(s) => s <= 0.0,
        }
    }

    fn allows(&self, steps_done: u64, elapsed: Duration) -> bool {
        match *self {
            Budget::Steps(n) => steps_done < n,
            Budget::Seconds(s) => elapsed.as_secs_f64() < s,
        }
    }
}

impl FromStr for Budget {
    type Err = Error;

    /// `steps:N`, `N` (steps), or a duration `Ns`, `Nm`, `Nh`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Argument(format!("invalid budget {s:?} (try \"steps:500\", \"90s\", \"15m\")"));
        if let Some(n) = s.strip_prefix("steps:") {
            return n.parse().map(Budget::Steps).map_err(|_| bad());
        }
        if let Ok(n) = s.parse::<u64>() {
            return Ok(Budget::Steps(n));
        }
        let (num, unit) = s.split_at(s.len().saturating_sub(1));
        let scale = match unit {
            "s" => 1.0,
            "m" => 60.0,
            "h" => 3600.0,
            _ => return Err(bad()),
        };
        let v: f64 = num.parse().map_err(|_| bad())?;
        if !(v.is_finite() && v >= 0.0) {
            return Err(bad());
        }
        Ok(Budget::Seconds(v * scale))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub crop: usize,
    pub seed: u64,
    pub perceptual_weight: f64,
    pub budget: Budget,
    /// Validation interval in steps.
    pub val_every: u64,
    /// Training views per scene held out as validation targets (they remain
    /// neighbor candidates).
    pub val_views: usize,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch: 4,
            crop: 64,
            seed: 0,
            perceptual_weight: PERCEPTUAL_WEIGHT,
            budget: Budget::Steps(100),
            val_every: 25,
            val_views: 2,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.lr > 0.0) || self.batch == 0 || self.crop == 0 || self.val_every == 0 || self.perceptual_weight < 0.0 {
            return Err(Error::Argument(format!("invalid training config {self:?}")));
        }
        Ok(())
    }
}

/// One supervised crop.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub view: PreparedView,
    /// Ground truth inside the same window.
    pub target: Tensor<f64>,
}

/// Evenly spaced validation picks from the training split.
pub fn validation_views(train: &[usize], count: usize) -> Vec<usize> {
    let count = count.min(train.len().saturating_sub(1));
    (0..count)
        .map(|j| train[(2 * j + 1) * train.len() / (2 * count)])
        .collect()
}

/// Forward, backward and one Adam update over a batch; returns the mean
/// loss.
pub fn train_step(
    params: &mut ParamSet<f32>,
    adam: &mut AdamState<f32>,
    batch: &[TrainSample],
    cfg: &TrainConfig,
    stack: &PerceptualStack<f32>,
    step: u64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    params.zero_grads();
    let scale = 1.0 / batch.len() as f32;
    let mut total = 0.0;
    for sample in batch {
        let mut g = Graph::<f32>::new();
        let mut layers = Layers::new(params);
        let out = forward(&mut g, &mut layers, &sample.view, &cfg.model)?;
        let target = g.constant(sample.target.cast());
        let l = loss(&mut g, stack, out, target, cfg.perceptual_weight)?;
        let value = g.value(l).data()[0] as f64;
        if !value.is_finite() {
            return Err(diverged(step, params, Some(g.value(out))));
        }
        total += value;
        let grads = g.backward(l)?;
        drop(layers);
        params.accumulate_grads(&g, &grads, scale)?;
    }
    if params.iter().any(|p| p.grad.as_ref().is_some_and(|g| !g.is_finite())) {
        return Err(diverged(step, params, None));
    }
    adam_step(params, adam)?;
    if params.iter().any(|p| !p.value.is_finite()) {
        return Err(diverged(step, params, None));
    }
    Ok(total / batch.len() as f64)
}

fn diverged(step: u64, params: &ParamSet<f32>, output: Option<&Tensor<f32>>) -> Error {
    let mut d = String::new();
    if let Some(o) = output {
        let _ = write!(d, "output norm {:.3e}; ", o.norm());
    }
    let _ = write!(d, "parameter / gradient norms:");
    for p in params.iter() {
        let gn = p.grad.as_ref().map_or(0.0, |g| g.norm());
        let _ = write!(d, " {}={:.3e}/{:.3e}", p.name, p.value.norm(), gn);
    }
    Error::Diverged { step, diagnostics: d }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub steps: u64,
    pub best_step: u64,
    pub best_val_loss: f64,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<(u64, f64)>,
}

struct SceneData<'a> {
    scene: &'a SceneDataset,
    train: Vec<usize>,
    targets: Vec<usize>,
    val: Vec<PreparedView>,
    val_gt: Vec<Tensor<f64>>,
}

/// Trains from `init` (or fresh parameters) on `scenes` until the budget
/// runs out and returns the parameters with the lowest validation loss. A
/// zero budget returns the starting parameters untouched.
pub fn fit(
    scenes: &[&SceneDataset],
    init: Option<&ParamSet<f32>>,
    cfg: &TrainConfig,
) -> Result<(ParamSet<f32>, FitReport)> {
    cfg.validate()?;
    let mut params = match init {
        Some(p) => p.clone(),
        None => init_params(cfg.seed)?,
    };
    if cfg.budget.is_zero() {
        return Ok((params, FitReport::default()));
    }
    if scenes.is_empty() {
        return Err(Error::Argument("no training scenes".into()));
    }
    let data = scenes
        .iter()
        .map(|&scene| scene_data(scene, cfg))
        .collect::<Result<Vec<_>>>()?;

    let stack = PerceptualStack::<f32>::new();
    let mut adam = AdamState::new(
        &params,
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7a11_5eed);
    let mut report = FitReport::default();
    let mut best = (validation_loss(&data, &params, cfg)?, params.clone());
    report.val_loss.push((0, best.0));
    report.best_val_loss = best.0;

    let start = Instant::now();
    let mut step = 0;
    while cfg.budget.allows(step, start.elapsed()) {
        let batch = (0..cfg.batch)
            .map(|_| sample(&data, &mut rng, cfg))
            .collect::<Result<Vec<_>>>()?;
        let l = train_step(&mut params, &mut adam, &batch, cfg, &stack, step)?;
        report.train_loss.push(l);
        step += 1;
        let last = !cfg.budget.allows(step, start.elapsed());
        if step % cfg.val_every == 0 || last {
            let v = validation_loss(&data, &params, cfg)?;
            report.val_loss.push((step, v));
            if v < best.0 {
                best = (v, params.clone());
                report.best_step = step;
                report.best_val_loss = v;
            }
        }
    }
    report.steps = step;
    let mut out = best.1;
    out.clear_grads();
    Ok((out, report))
}

fn scene_data<'a>(scene: &'a SceneDataset, cfg: &TrainConfig) -> Result<SceneData<'a>> {
    let (h, w) = (scene.intrinsics.height, scene.intrinsics.width);
    if cfg.crop > h || cfg.crop > w {
        return Err(Error::Argument(format!("crop {} exceeds image size {h}×{w}", cfg.crop)));
    }
    let (train, _) = scene.split()?;
    let val_idx = validation_views(&train, cfg.val_views);
    let targets: Vec<usize> = train.iter().copied().filter(|i| !val_idx.contains(i)).collect();
    if targets.is_empty() {
        return Err(Error::Argument("no training targets left after validation hold-out".into()));
    }
    let val = val_idx
        .iter()
        .map(|&v| prepare_view(scene, v, &train, Window::full(h, w), &cfg.model))
        .collect::<Result<Vec<_>>>()?;
    let val_gt = val_idx.iter().map(|&v| scene.views[v].rgb.clone()).collect();
    Ok(SceneData {
        scene,
        train,
        targets,
        val,
        val_gt,
    })
}

fn sample(data: &[SceneData], rng: &mut ChaCha8Rng, cfg: &TrainConfig) -> Result<TrainSample> {
    let d = &data[rng.random_range(0..data.len())];
    let target = d.targets[rng.random_range(0..d.targets.len())];
    let (h, w) = (d.scene.intrinsics.height, d.scene.intrinsics.width);
    let window = Window {
        top: rng.random_range(0..=h - cfg.crop),
        left: rng.random_range(0..=w - cfg.crop),
        height: cfg.crop,
        width: cfg.crop,
    };
    Ok(TrainSample {
        view: prepare_view(d.scene, target, &d.train, window, &cfg.model)?,
        target: crop(&d.scene.views[target].rgb, window)?,
    })
}

fn validation_loss(data: &[SceneData], params: &ParamSet<f32>, cfg: &TrainConfig) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0;
    for d in data {
        for (view, gt) in d.val.iter().zip(&d.val_gt) {
            let out = enhance_prepared(view, params, &cfg.model)?;
            total += loss_value(&out, gt, cfg.perceptual_weight)?;
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_parsing() {
        assert_eq!("steps:40".parse::<Budget>().unwrap(), Budget::Steps(40));
        assert_eq!("12".parse::<Budget>().unwrap(), Budget::Steps(12));
        assert_eq!("90s".parse::<Budget>().unwrap(), Budget::Seconds(90.0));
        assert_eq!("1m".parse::<Budget>().unwrap(), Budget::Seconds(60.0));
        assert_eq!("0.5h".parse::<Budget>().unwrap(), Budget::Seconds(1800.0));
        assert!("fast".parse::<Budget>().is_err());
        assert!("-1s".parse::<Budget>().is_err());
    }

    #[test]
    fn validation_picks_are_train_views() {
        let train: Vec<usize> = (1..24).filter(|i| i % 8 != 0).collect();
        let v = validation_views(&train, 2);
        assert_eq!(v.len(), 2);
        assert!(v.iter().all(|i| train.contains(i)));
        assert_ne!(v[0], v[1]);
    }
}
