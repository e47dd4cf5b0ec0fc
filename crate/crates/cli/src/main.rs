//! `geofuse` command line: scene synthesis, degradation, pose noise,
//! training, enhancement, evaluation and the gradient suite.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use geofuse::gradsuite::{gradient_suite, GRAD_TOLERANCE};
use geofuse::scene::{
    load_scene, perturb_poses, save_scene, write_png, DegradationConfig, PoseNoiseConfig, PoseNoisePreset,
    SceneDataset, SynthSpec,
};
use geofuse::{enhance_view, evaluate_scene, fit, Budget, ModelConfig, TrainConfig};
use geofuse_numerics::{read_checkpoint, write_checkpoint, GradCheckConfig, ParamSet};

#[derive(Parser)]
#[command(name = "geofuse", version, about = "Geometry-consistent multi-view enhancement of degraded renders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene directory.
    Synth {
        /// JSON scene description, or `desk:SEED[:VIEWS[:SIZE]]` for the
        /// built-in desk preset.
        #[arg(long)]
        spec: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Attach simulated degraded renders to every view.
    Degrade {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 1.5)]
        blur: f64,
        #[arg(long, default_value_t = 2)]
        factor: usize,
        #[arg(long, default_value_t = 0.01)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Perturb the training-view poses.
    Perturb {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, conflicts_with_all = ["rot_sigma", "pos_sigma"])]
        preset: Option<PoseNoisePreset>,
        /// Per-axis rotation noise in degrees.
        #[arg(long, requires = "pos_sigma")]
        rot_sigma: Option<f64>,
        #[arg(long, requires = "rot_sigma")]
        pos_sigma: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train from scratch on one or more scenes.
    Pretrain {
        #[arg(long, num_args = 1.., required = true)]
        scenes: Vec<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        out_ckpt: PathBuf,
    },
    /// Continue training a checkpoint on one scene.
    Finetune {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        out_ckpt: PathBuf,
    },
    /// Enhance one view and write it as PNG.
    Enhance {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        view_index: usize,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        out_png: PathBuf,
    },
    /// Score every held-out view and write a JSON report.
    Eval {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        report_json: PathBuf,
    },
    /// Finite-difference check of every operation and network block.
    Gradcheck,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, default_value_t = ModelConfig::default().neighbors)]
    neighbors: usize,
    #[arg(long, default_value_t = ModelConfig::default().leniency)]
    leniency: f64,
    #[arg(long, default_value_t = ModelConfig::default().flow_iters)]
    flow_iters: usize,
    /// Add the degraded render to the network output.
    #[arg(long)]
    residual: bool,
}

impl ModelArgs {
    fn config(&self) -> ModelConfig {
        ModelConfig {
            neighbors: self.neighbors,
            leniency: self.leniency,
            flow_iters: self.flow_iters,
            residual: self.residual,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// `steps:N`, `N`, or a wall-clock allowance such as `90s`, `15m`.
    #[arg(long)]
    budget: Budget,
    #[arg(long, default_value_t = TrainConfig::default().lr)]
    lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().batch)]
    batch: usize,
    #[arg(long, default_value_t = TrainConfig::default().crop)]
    crop: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = TrainConfig::default().perceptual_weight)]
    perceptual_weight: f64,
    #[arg(long, default_value_t = TrainConfig::default().val_every)]
    val_every: u64,
    #[command(flatten)]
    model: ModelArgs,
}

impl TrainArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch: self.batch,
            crop: self.crop,
            seed: self.seed,
            perceptual_weight: self.perceptual_weight,
            budget: self.budget,
            val_every: self.val_every,
            model: self.model.config(),
            ..TrainConfig::default()
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { spec, out } => {
            let spec = parse_spec(&spec)?;
            save_scene(&spec.build()?, &out)?;
        }
        Command::Degrade {
            scene,
            blur,
            factor,
            noise,
            seed,
            out,
        } => {
            let cfg = DegradationConfig {
                blur_sigma: blur,
                down_up_factor: factor,
                noise_sigma: noise,
                seed,
                ..DegradationConfig::default()
            };
            save_scene(&load(&scene)?.with_degraded_renders(&cfg)?, &out)?;
        }
        Command::Perturb {
            scene,
            preset,
            rot_sigma,
            pos_sigma,
            seed,
            out,
        } => {
            let cfg = match (preset, rot_sigma, pos_sigma) {
                (Some(p), _, _) => PoseNoiseConfig::preset(p, seed),
                (None, Some(rot_sigma_deg), Some(pos_sigma)) => PoseNoiseConfig {
                    rot_sigma_deg,
                    pos_sigma,
                    seed,
                },
                _ => bail!("give either --preset or both --rot-sigma and --pos-sigma"),
            };
            save_scene(&perturb_poses(&load(&scene)?, &cfg)?, &out)?;
        }
        Command::Pretrain { scenes, train, out_ckpt } => {
            let scenes = scenes.iter().map(|p| load(p)).collect::<Result<Vec<_>>>()?;
            let refs: Vec<&SceneDataset> = scenes.iter().collect();
            let (params, report) = fit(&refs, None, &train.config())?;
            eprintln!(
                "{} steps, best validation loss {:.5} at step {}",
                report.steps, report.best_val_loss, report.best_step
            );
            save_checkpoint(&params, &out_ckpt)?;
        }
        Command::Finetune {
            scene,
            ckpt,
            train,
            out_ckpt,
        } => {
            let scene = load(&scene)?;
            let init = load_checkpoint(&ckpt)?;
            let (params, report) = fit(&[&scene], Some(&init), &train.config())?;
            eprintln!(
                "{} steps, best validation loss {:.5} at step {}",
                report.steps, report.best_val_loss, report.best_step
            );
            save_checkpoint(&params, &out_ckpt)?;
        }
        Command::Enhance {
            scene,
            ckpt,
            view_index,
            model,
            out_png,
        } => {
            let scene = load(&scene)?;
            let params = load_checkpoint(&ckpt)?;
            let out = enhance_view(&scene, view_index, &params, &model.config())?;
            write_png(&out_png, &out)?;
        }
        Command::Eval {
            scene,
            ckpt,
            model,
            report_json,
        } => {
            let scene = load(&scene)?;
            let params = load_checkpoint(&ckpt)?;
            let report = evaluate_scene(&scene, &params, &model.config())?;
            std::fs::write(&report_json, report.to_json()?)
                .with_context(|| format!("writing {}", report_json.display()))?;
            eprintln!(
                "PSNR {:.2} -> {:.2} dB, SSIM {:.4} -> {:.4}",
                report.mean.psnr_in, report.mean.psnr_out, report.mean.ssim_in, report.mean.ssim_out
            );
        }
        Command::Gradcheck => {
            let cases = gradient_suite(&GradCheckConfig::default())?;
            let mut failed = 0;
            for c in &cases {
                let verdict = if c.passes() { "ok" } else { "FAILED" };
                println!(
                    "{:<22} {verdict:<6} max rel err {:.2e} over {} entries",
                    c.name, c.report.max_rel_error, c.report.checked
                );
                failed += usize::from(!c.passes());
            }
            if failed > 0 {
                bail!("{failed} of {} gradient checks exceed {GRAD_TOLERANCE:e}", cases.len());
            }
        }
    }
    Ok(())
}

fn parse_spec(spec: &str) -> Result<SynthSpec> {
    if let Some(rest) = spec.strip_prefix("desk:") {
        let parts = rest
            .split(':')
            .map(str::parse::<u64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .with_context(|| format!("invalid desk preset {spec:?}"))?;
        let (seed, views, size) = match parts[..] {
            [s] => (s, 24, 96),
            [s, v] => (s, v, 96),
            [s, v, n] => (s, v, n),
            _ => bail!("invalid desk preset {spec:?}, expected desk:SEED[:VIEWS[:SIZE]]"),
        };
        return Ok(SynthSpec::desk(seed, views as usize, size as usize));
    }
    let file = File::open(spec).with_context(|| format!("opening {spec}"))?;
    serde_json::from_reader(BufReader::new(file)).with_context(|| format!("parsing {spec}"))
}

fn load(dir: &Path) -> Result<SceneDataset> {
    Ok(load_scene(dir)?)
}

fn load_checkpoint(path: &Path) -> Result<ParamSet<f32>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_checkpoint(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn save_checkpoint(params: &ParamSet<f32>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    write_checkpoint(params, &mut w)?;
    w.flush()?;
    Ok(())
}
