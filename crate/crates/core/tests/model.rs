mod common;

use common::*;
use geofuse::geometry::{gather_aligned, reproject_map, visibility, Window};
use geofuse::model::{
    apply_attention, camera_attention, camera_input, encode, enhance_backbone, estimate_flow, fuse, init_params,
    pixel_attention, warp2d, Encoder, Layers, FEATURES,
};
use geofuse::pipeline::{enhance_prepared, prepare_view};
use geofuse::scene::{rotation_error_deg, DegradationConfig, SceneDataset, SynthSpec};
use geofuse::{enhance_view, evaluate_scene, ModelConfig};
use geofuse_numerics::{adam_step, AdamConfig, AdamState, Graph, ParamSet, Tensor};
use nalgebra::Matrix3;
use rand::Rng;

fn random_map(c: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    Tensor::from_fn(&[c, h, w], |_| r.random_range(-1.0..1.0))
}

/// Smooth multi-channel pattern: per channel, two sinusoids with periods
/// of 12–24 px and random phases, so a few pixels of shift stay inside the
/// photometric basin.
fn smooth_pattern(c: usize, h: usize, w: usize, dx: f64, dy: f64, seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    let waves: Vec<[f64; 6]> = (0..c)
        .map(|_| {
            let mut wave = || {
                let period = r.random_range(12.0..24.0);
                let theta: f64 = r.random_range(0.0..std::f64::consts::TAU);
                [
                    theta.cos() * std::f64::consts::TAU / period,
                    theta.sin() * std::f64::consts::TAU / period,
                    r.random_range(0.0..std::f64::consts::TAU),
                ]
            };
            let (a, b) = (wave(), wave());
            [a[0], a[1], a[2], b[0], b[1], b[2]]
        })
        .collect();
    Tensor::from_fn(&[c, h, w], |i| {
        let ch = i / (h * w);
        let (x, y) = ((i % w) as f64 + dx, ((i / w) % h) as f64 + dy);
        let v = &waves[ch];
        0.5 * ((v[0] * x + v[1] * y + v[2]).sin() + (v[3] * x + v[4] * y + v[5]).sin())
    })
}

/// The `flow.*` tensors of a fresh parameter set.
fn flow_params(seed: u64) -> ParamSet<f32> {
    let full: ParamSet<f32> = init_params(seed).unwrap();
    let mut p = ParamSet::new();
    for q in full.iter().filter(|q| q.name.starts_with("flow.")) {
        p.insert(q.name.clone(), q.value.clone()).unwrap();
    }
    p
}

/// Fits the flow network so that warping `source` by its estimate matches
/// `target` on `mask` (masked mean L1), returning the fitted parameters.
fn fit_flow(source: &Tensor<f64>, target: &Tensor<f64>, mask: &Tensor<f64>, steps: usize, lr: f64) -> ParamSet<f32> {
    let mut params = flow_params(11);
    let mut adam = AdamState::new(&params, AdamConfig { lr, ..AdamConfig::default() });
    for _ in 0..steps {
        params.zero_grads();
        let mut g = Graph::<f32>::new();
        let mut layers = Layers::new(&params);
        let s = g.constant(source.cast());
        let t = g.constant(target.cast());
        let m = g.constant(mask.cast());
        let flow = estimate_flow(&mut g, &mut layers, s, t, 3).unwrap();
        let warped = warp2d(&mut g, s, flow).unwrap();
        let d = g.sub(warped, t).unwrap();
        let d = g.mul_map(d, m).unwrap();
        let l = g.mean_abs(d);
        let grads = g.backward(l).unwrap();
        drop(layers);
        params.accumulate_grads(&g, &grads, 1.0).unwrap();
        adam_step(&mut params, &mut adam).unwrap();
    }
    params
}

fn predict_flow(params: &ParamSet<f32>, source: &Tensor<f64>, target: &Tensor<f64>) -> Tensor<f64> {
    let mut g = Graph::<f32>::new();
    let mut layers = Layers::frozen(params);
    let s = g.constant(source.cast());
    let t = g.constant(target.cast());
    let f = estimate_flow(&mut g, &mut layers, s, t, 3).unwrap();
    g.value(f).cast()
}

fn warp_value(features: &Tensor<f64>, flow: &Tensor<f64>) -> Tensor<f64> {
    let mut g = Graph::<f64>::new();
    let f = g.constant(features.clone());
    let fl = g.constant(flow.clone());
    let out = warp2d(&mut g, f, fl).unwrap();
    g.value(out).clone()
}

#[test]
fn encoders_keep_size_and_emit_64_channels() {
    let params: ParamSet<f64> = init_params(1).unwrap();
    for (h, w) in [(8, 8), (13, 9), (16, 21)] {
        let mut g = Graph::new();
        let mut layers = Layers::frozen(&params);
        let x = g.constant(random_map(3, h, w, 2).map(|v| 0.5 + 0.5 * v));
        let a = encode(&mut g, &mut layers, Encoder::Render, x).unwrap();
        let b = encode(&mut g, &mut layers, Encoder::Neighbor, x).unwrap();
        assert_eq!(g.value(a).shape(), [FEATURES, h, w]);
        assert_ne!(g.value(a), g.value(b));
    }
    let mut g = Graph::new();
    let mut layers = Layers::frozen(&params);
    let x = g.constant(Tensor::zeros(&[4, 8, 8]));
    assert!(encode(&mut g, &mut layers, Encoder::Render, x).is_err());
}

#[test]
fn fresh_flow_is_exactly_zero() {
    let params: ParamSet<f64> = init_params(2).unwrap();
    let mut g = Graph::new();
    let mut layers = Layers::frozen(&params);
    let s = g.constant(random_map(64, 19, 23, 3));
    let t = g.constant(random_map(64, 19, 23, 4));
    let f = estimate_flow(&mut g, &mut layers, s, t, 3).unwrap();
    assert_eq!(g.value(f).shape(), [2, 19, 23]);
    assert!(g.value(f).data().iter().all(|v| *v == 0.0));

    let bad = g.constant(random_map(64, 19, 22, 5));
    assert!(estimate_flow(&mut g, &mut layers, s, bad, 3).is_err());
}

#[test]
fn fitted_flow_recovers_translations() {
    let (h, w) = (32, 32);
    for (dx, dy) in [(4.0, 0.0), (-3.0, 5.0)] {
        let source = smooth_pattern(64, h, w, 0.0, 0.0, 21);
        let target = smooth_pattern(64, h, w, dx, dy, 21);
        // Only pixels whose shifted sample stays inside the source carry
        // information; the rest are masked out of both fitting and scoring.
        let inside = |x: usize, y: usize| {
            let (sx, sy) = (x as f64 + dx, y as f64 + dy);
            sx >= 0.0 && sy >= 0.0 && sx <= (w - 1) as f64 && sy <= (h - 1) as f64
        };
        let mask = Tensor::from_fn(&[1, h, w], |p| f64::from(u8::from(inside(p % w, p / w))));
        let params = fit_flow(&source, &target, &mask, 300, 2e-3);
        let flow = predict_flow(&params, &source, &target);
        let (mut err, mut n) = (0.0, 0.0);
        for y in 4..h - 4 {
            for x in 4..w - 4 {
                if inside(x, y) {
                    let p = y * w + x;
                    err += ((flow.data()[p] - dx).powi(2) + (flow.data()[h * w + p] - dy).powi(2)).sqrt();
                    n += 1.0;
                }
            }
        }
        let mean = err / n;
        assert!(mean < 0.5, "shift ({dx}, {dy}): mean flow error {mean:.3} px");
    }
}

#[test]
fn flow_refinement_improves_on_rigid_alignment_under_pose_error() {
    let spec = sphere_scene(64);
    let scene = spec.build().unwrap();
    let (k, i) = (5, 6);
    let novel = &scene.views[k];
    let mut nb = scene.views[i].clone();
    // A 1.5° yaw error on the neighbor moves its reprojection by a few pixels.
    let a = 1.5f64.to_radians();
    let yaw = Matrix3::new(a.cos(), 0.0, a.sin(), 0.0, 1.0, 0.0, -a.sin(), 0.0, a.cos());
    nb.pose.rotation = yaw * nb.pose.rotation;
    assert!(rotation_error_deg(&nb.pose.rotation, &scene.views[i].pose.rotation) > 1.0);

    let params: ParamSet<f64> = init_params(3).unwrap();
    let feats = |img: &Tensor<f64>| {
        let mut g = Graph::new();
        let mut layers = Layers::frozen(&params);
        let x = g.constant(img.clone());
        let f = encode(&mut g, &mut layers, Encoder::Render, x).unwrap();
        g.value(f).clone()
    };
    let target = feats(&novel.rgb);
    let grid = reproject_map(
        novel.depth.as_ref().unwrap(),
        &novel.intrinsics,
        &novel.pose,
        &nb.intrinsics,
        &nb.pose,
    )
    .unwrap();
    let depth_i = nb.depth.clone().unwrap();
    let mask = visibility(&grid, &depth_i, 0.25).unwrap();
    let (gathered, _) = gather_aligned(&feats(&nb.rgb), &depth_i, &grid, &mask).unwrap();

    let masked_error = |x: &Tensor<f64>| {
        let (hw, mut acc, mut n) = (64 * 64, 0.0, 0.0);
        for (j, (a, b)) in x.data().iter().zip(target.data()).enumerate() {
            if mask.data()[j % hw] > 0.0 {
                acc += (a - b).abs();
                n += 1.0;
            }
        }
        acc / n
    };
    let rigid = masked_error(&gathered);
    let fitted = fit_flow(&gathered, &target, &mask, 150, 2e-3);
    let flow = predict_flow(&fitted, &gathered, &target);
    let refined = masked_error(&warp_value(&gathered, &flow));
    assert!(refined < rigid, "refined {refined:.5} vs rigid {rigid:.5}");
}

#[test]
fn warp_zero_flow_is_identity_and_integer_shift_fills_zero() {
    let (h, w) = (5, 7);
    let f = random_map(3, h, w, 6);
    assert_eq!(warp_value(&f, &Tensor::zeros(&[2, h, w])), f);

    let ramp = Tensor::from_fn(&[1, h, w], |i| (i % w) as f64 + 1.0);
    let flow = Tensor::from_fn(&[2, h, w], |i| if i < h * w { 1.0 } else { 0.0 });
    let out = warp_value(&ramp, &flow);
    for y in 0..h {
        for x in 0..w {
            let want = if x + 1 < w { (x + 2) as f64 } else { 0.0 };
            assert_eq!(out.get3(0, y, x), want, "({x}, {y})");
        }
    }
}

#[test]
fn warp_is_linear_in_features() {
    let (h, w) = (6, 9);
    let flow = random_map(2, h, w, 7).map(|v| 2.5 * v);
    let (a, b) = (random_map(4, h, w, 8), random_map(4, h, w, 9));
    let combo = Tensor::from_fn(a.shape(), |i| 2.0 * a.data()[i] - 0.5 * b.data()[i]);
    let (wa, wb, wc) = (warp_value(&a, &flow), warp_value(&b, &flow), warp_value(&combo, &flow));
    for j in 0..wc.len() {
        assert!((wc.data()[j] - (2.0 * wa.data()[j] - 0.5 * wb.data()[j])).abs() < 1e-12);
    }
}

#[test]
fn attention_outputs_lie_strictly_inside_unit_interval() {
    let params: ParamSet<f64> = init_params(4).unwrap();
    let mut r = rng(10);
    for trial in 0..5 {
        let mut g = Graph::new();
        let mut layers = Layers::frozen(&params);
        let nb = g.constant(random_map(64, 9, 11, 20 + trial).map(|v| 3.0 * v));
        let rf = g.constant(random_map(64, 9, 11, 40 + trial).map(|v| 3.0 * v));
        let d1 = g.constant(random_map(1, 9, 11, 60 + trial).map(|v| 0.5 + 0.5 * v));
        let d2 = g.constant(random_map(1, 9, 11, 80 + trial).map(|v| 0.5 + 0.5 * v));
        let psi = pixel_attention(&mut g, &mut layers, nb, rf, d1, d2).unwrap();
        assert_eq!(g.value(psi).shape(), [1, 9, 11]);
        assert!(g.value(psi).data().iter().all(|v| *v > 0.0 && *v < 1.0));

        let cam = camera_input(&random_pose(&mut r), &random_pose(&mut r)).unwrap();
        let values: Vec<f64> = (0..2)
            .map(|_| {
                let c = g.constant(cam.clone());
                let v = camera_attention(&mut g, &mut layers, c).unwrap();
                g.value(v).data()[0]
            })
            .collect();
        assert!(values[0] > 0.0 && values[0] < 1.0);
        assert_eq!(values[0], values[1]);
    }
}

#[test]
fn apply_attention_matches_elementwise_oracle() {
    let (c, h, w) = (4, 5, 6);
    let f = random_map(c, h, w, 30);
    let pix = random_map(1, h, w, 31).map(|v| 0.5 + 0.45 * v);
    let run = |pix: &Tensor<f64>, cam: f64| {
        let mut g = Graph::new();
        let fv = g.constant(f.clone());
        let pv = g.constant(pix.clone());
        let cv = g.constant(Tensor::new(&[1], vec![cam]).unwrap());
        let out = apply_attention(&mut g, fv, pv, cv).unwrap();
        g.value(out).clone()
    };
    assert_eq!(run(&Tensor::full(&[1, h, w], 1.0), 1.0), f);
    let halved = run(&Tensor::full(&[1, h, w], 1.0), 0.5);
    assert!(halved.data().iter().zip(f.data()).all(|(a, b)| *a == 0.5 * b));
    let out = run(&pix, 0.7);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let want = 0.7 * pix.get3(0, y, x) * f.get3(ch, y, x);
                assert!((out.get3(ch, y, x) - want).abs() < 1e-12);
                assert!(out.get3(ch, y, x).abs() <= f.get3(ch, y, x).abs());
            }
        }
    }
}

#[test]
fn fusion_is_order_free_and_monotone() {
    let maps: Vec<Tensor<f64>> = (0..5).map(|s| random_map(3, 4, 5, 50 + s)).collect();
    let fused = |order: &[usize]| {
        let mut g = Graph::new();
        let vars: Vec<_> = order.iter().map(|&j| g.constant(maps[j].clone())).collect();
        let out = fuse(&mut g, &vars).unwrap();
        g.value(out).clone()
    };
    assert_eq!(fused(&[2]), maps[2]);
    let base = fused(&[0, 1, 2, 3, 4]);
    assert_eq!(fused(&[3, 1, 4, 0, 2]), base);
    assert_eq!(fused(&[4, 3, 2, 1, 0]), base);
    let fewer = fused(&[0, 1, 2]);
    assert!(base.data().iter().zip(fewer.data()).all(|(a, b)| a >= b));
    let mut g = Graph::<f64>::new();
    assert!(fuse(&mut g, &[]).is_err());
}

#[test]
fn backbone_handles_sizes_that_are_not_multiples_of_four() {
    let params: ParamSet<f32> = init_params(5).unwrap();
    for (h, w) in [(65, 65), (10, 7), (8, 12)] {
        let mut g = Graph::<f32>::new();
        let mut layers = Layers::frozen(&params);
        let rf = g.constant(random_map(64, h, w, 70).cast());
        let pooled = g.constant(random_map(64, h, w, 71).cast());
        let out = enhance_backbone(&mut g, &mut layers, rf, pooled, None).unwrap();
        assert_eq!(g.value(out).shape(), [3, h, w]);
        assert!(g.value(out).is_finite());
    }
    let mut g = Graph::<f32>::new();
    let mut layers = Layers::frozen(&params);
    let rf = g.constant(Tensor::zeros(&[64, 8, 8]));
    let pooled = g.constant(Tensor::zeros(&[64, 8, 12]));
    assert!(enhance_backbone(&mut g, &mut layers, rf, pooled, None).is_err());
}

fn small_scene(seed: u64) -> SceneDataset {
    SynthSpec::desk(seed, 12, 32)
        .build()
        .unwrap()
        .with_degraded_renders(&DegradationConfig::default())
        .unwrap()
}

#[test]
fn enhanced_view_has_render_shape_and_valid_range() {
    let scene = small_scene(1);
    let params: ParamSet<f32> = init_params(6).unwrap();
    for n in [1, 2, 5] {
        let cfg = ModelConfig {
            neighbors: n,
            ..ModelConfig::default()
        };
        let out = enhance_view(&scene, 8, &params, &cfg).unwrap();
        assert_eq!(out.shape(), scene.render(8).unwrap().shape());
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn zero_attention_still_yields_an_image() {
    let scene = small_scene(2);
    let mut params: ParamSet<f32> = init_params(7).unwrap();
    // Saturate the camera gate shut (f32 sigmoid bottoms out near 1e-7).
    params
        .value_mut("att_cam.fc2.bias")
        .unwrap()
        .data_mut()
        .fill(-1e4);
    let cfg = ModelConfig::default();
    let view = prepare_view(&scene, 0, &scene.split().unwrap().0, Window::full(32, 32), &cfg).unwrap();
    let mut g = Graph::<f32>::new();
    let mut layers = Layers::frozen(&params);
    let c = g.constant(view.neighbors[0].camera.cast());
    let psi = camera_attention(&mut g, &mut layers, c).unwrap();
    assert!(g.value(psi).data()[0] < 1e-6);

    let out = enhance_prepared(&view, &params, &cfg).unwrap();
    assert_eq!(out.shape(), [3, 32, 32]);
    assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn too_few_training_views_is_an_argument_error() {
    let scene = small_scene(3);
    let params: ParamSet<f32> = init_params(8).unwrap();
    let view = prepare_view(&scene, 0, &[1, 2, 3, 4], Window::full(32, 32), &ModelConfig::default());
    assert!(view.is_err());
    assert!(enhance_view(&scene, 0, &params, &ModelConfig::default()).is_ok());
}

#[test]
fn enhancement_ignores_neighbor_order_and_view_labels() {
    let scene = small_scene(4);
    let params: ParamSet<f32> = init_params(9).unwrap();
    let cfg = ModelConfig {
        neighbors: 5,
        ..ModelConfig::default()
    };
    let (train, _) = scene.split().unwrap();
    let view = prepare_view(&scene, 8, &train, Window::full(32, 32), &cfg).unwrap();
    let base = enhance_prepared(&view, &params, &cfg).unwrap();

    let mut reordered = view.clone();
    reordered.neighbors.reverse();
    reordered.neighbors.swap(0, 2);
    assert_eq!(enhance_prepared(&reordered, &params, &cfg).unwrap(), base);

    let mut shuffled = train.clone();
    shuffled.reverse();
    shuffled.rotate_left(3);
    let relabeled = prepare_view(&scene, 8, &shuffled, Window::full(32, 32), &cfg).unwrap();
    assert_eq!(enhance_prepared(&relabeled, &params, &cfg).unwrap(), base);
}

#[test]
fn identity_enhancer_reproduces_baseline_metrics() {
    let mut scene = small_scene(5);
    // Inference runs in f32; keep renders exactly representable so the
    // identity path is bit-exact.
    for r in scene.renders.as_mut().unwrap() {
        *r = r.map(|v| v as f32 as f64);
    }
    let mut params: ParamSet<f32> = init_params(10).unwrap();
    params.value_mut("backbone.out.weight").unwrap().data_mut().fill(0.0);
    params.value_mut("backbone.out.bias").unwrap().data_mut().fill(0.0);
    let cfg = ModelConfig {
        residual: true,
        ..ModelConfig::default()
    };
    let report = evaluate_scene(&scene, &params, &cfg).unwrap();
    assert_eq!(report.per_view.len(), 2);
    for v in &report.per_view {
        assert_eq!(v.psnr_out, v.psnr_in);
        assert_eq!(v.ssim_out, v.ssim_in);
    }
}
