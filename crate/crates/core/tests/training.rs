use geofuse::geometry::Window;
use geofuse::loss::PerceptualStack;
use geofuse::metrics::{psnr, ssim};
use geofuse::model::init_params;
use geofuse::pipeline::{crop, prepare_view};
use geofuse::scene::{DegradationConfig, SceneDataset, SynthSpec};
use geofuse::train::TrainSample;
use geofuse::{fit, noise_sweep, train_step, Budget, TrainConfig};
use geofuse_numerics::{write_checkpoint, AdamConfig, AdamState, ParamSet, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scene(seed: u64) -> SceneDataset {
    SynthSpec::desk(seed, 12, 32)
        .build()
        .unwrap()
        .with_degraded_renders(&DegradationConfig::default())
        .unwrap()
}

fn small_config(budget: Budget) -> TrainConfig {
    TrainConfig {
        batch: 2,
        crop: 24,
        budget,
        val_every: 2,
        ..TrainConfig::default()
    }
}

/// Four 32×32 samples drawn from two fixed target views.
fn toy_batch(scene: &SceneDataset) -> Vec<TrainSample> {
    let (train, _) = scene.split().unwrap();
    let cfg = TrainConfig::default();
    [3, 5, 3, 5]
        .into_iter()
        .map(|t| TrainSample {
            view: prepare_view(scene, t, &train, Window::full(32, 32), &cfg.model).unwrap(),
            target: scene.views[t].rgb.clone(),
        })
        .collect()
}

fn run_steps(batch: &[TrainSample], steps: u64) -> (Vec<f64>, ParamSet<f32>) {
    let cfg = TrainConfig::default();
    let mut params = init_params(0).unwrap();
    let mut adam = AdamState::new(
        &params,
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let stack = PerceptualStack::new();
    let trace = (0..steps)
        .map(|s| train_step(&mut params, &mut adam, batch, &cfg, &stack, s).unwrap())
        .collect();
    (trace, params)
}

fn checkpoint_bytes(p: &ParamSet<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    write_checkpoint(p, &mut out).unwrap();
    out
}

#[test]
fn loss_falls_over_fifty_steps_on_two_view_toy_set() {
    let s = scene(1);
    let batch = toy_batch(&s);
    let (trace, _) = run_steps(&batch, 50);
    let head = trace[..10].iter().sum::<f64>() / 10.0;
    let tail = trace[40..].iter().sum::<f64>() / 10.0;
    assert!(tail < head, "smoothed loss {head:.4} -> {tail:.4}");
}

#[test]
fn equal_seeds_give_identical_loss_traces() {
    let s = scene(2);
    let batch = toy_batch(&s);
    let (a, pa) = run_steps(&batch, 4);
    let (b, pb) = run_steps(&batch, 4);
    assert_eq!(a, b);
    assert_eq!(checkpoint_bytes(&pa), checkpoint_bytes(&pb));
}

#[test]
fn zero_budget_returns_the_input_checkpoint() {
    let s = scene(3);
    let init: ParamSet<f32> = init_params(42).unwrap();
    for budget in [Budget::Steps(0), Budget::Seconds(0.0)] {
        let (out, report) = fit(&[&s], Some(&init), &small_config(budget)).unwrap();
        assert_eq!(checkpoint_bytes(&out), checkpoint_bytes(&init));
        assert_eq!(report.steps, 0);
    }
}

#[test]
fn fit_is_deterministic_and_longer_budgets_never_lose() {
    let s = scene(4);
    let (short, rs) = fit(&[&s], None, &small_config(Budget::Steps(4))).unwrap();
    let (again, _) = fit(&[&s], None, &small_config(Budget::Steps(4))).unwrap();
    let (_, rl) = fit(&[&s], None, &small_config(Budget::Steps(8))).unwrap();
    assert_eq!(checkpoint_bytes(&short), checkpoint_bytes(&again));
    assert_eq!(rs.steps, 4);
    assert_eq!(rl.steps, 8);
    assert_eq!(rl.val_loss[..rs.val_loss.len()], rs.val_loss[..]);
    assert!(rl.best_val_loss <= rs.best_val_loss);
}

#[test]
fn seconds_budget_stops() {
    let s = scene(5);
    let (_, r) = fit(&[&s], None, &small_config(Budget::Seconds(1.0))).unwrap();
    assert!(r.steps >= 1);
}

#[test]
fn noise_sweep_reports_every_level() {
    let s = scene(6);
    let cfg = TrainConfig {
        batch: 1,
        crop: 16,
        budget: Budget::Steps(1),
        ..TrainConfig::default()
    };
    let sweep = noise_sweep(&s, &cfg, 9).unwrap();
    let names: Vec<&str> = sweep.iter().map(|e| e.noise.as_str()).collect();
    assert_eq!(names, ["none", "small", "medium", "large"]);
    assert!(sweep.iter().all(|e| e.report.per_view.len() == 2));
}

#[test]
fn psnr_matches_direct_formula() {
    let mut r = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let a = Tensor::from_fn(&[3, 12, 13], |_| r.random::<f64>());
        let b = Tensor::from_fn(&[3, 12, 13], |_| r.random::<f64>());
        let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
        let want = 10.0 * (1.0 / mse).log10();
        assert!((psnr(&a, &b).unwrap() - want).abs() < 1e-9);
    }
}

#[test]
fn ssim_of_negated_mid_grey_content_is_negative() {
    let mut r = ChaCha8Rng::seed_from_u64(8);
    let a = Tensor::from_fn(&[3, 24, 24], |_| 0.5 + r.random_range(-0.4..0.4));
    let neg = a.map(|v| 1.0 - v);
    assert!(ssim(&a, &neg).unwrap() < 0.0);
    let rgb = crop(&a, Window { top: 0, left: 0, height: 11, width: 11 }).unwrap();
    assert!((ssim(&rgb, &rgb).unwrap() - 1.0).abs() < 1e-12);
}
