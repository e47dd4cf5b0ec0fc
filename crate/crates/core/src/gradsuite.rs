//! Finite-difference checks of every differentiable operation and of each
//! network block, in double precision on inputs of at most 8×8 pixels.

use geofuse_numerics::{grad_check, Error as NumError, GradCheckConfig, GradCheckReport, Graph, ParamSet, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::loss::{loss, PerceptualStack, PERCEPTUAL_WEIGHT};
use crate::model::{
    apply_attention, camera_attention, encode, enhance_backbone, estimate_flow, fuse, init_params, pixel_attention,
    warp2d, Encoder, Layers,
};

/// Largest accepted relative error.
pub const GRAD_TOLERANCE: f64 = 1e-4;

const SEED: u64 = 0x9c4e_c0de;

#[derive(Clone, Debug)]
pub struct GradCase {
    pub name: &'static str,
    pub report: GradCheckReport,
}

impl GradCase {
    pub fn passes(&self) -> bool {
        self.report.passes(GRAD_TOLERANCE)
    }
}

fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

fn rand(shape: &[usize], seed: u64) -> Tensor<f64> {
    uniform(shape, -1.0, 1.0, seed)
}

fn num(e: Error) -> NumError {
    match e {
        Error::Numerics(e) => e,
        other => NumError::Argument(other.to_string()),
    }
}

type Build<'a> = Box<dyn Fn(&mut Graph<f64>, &ParamSet<f64>, &[Var]) -> geofuse_numerics::Result<Var> + 'a>;

struct Case<'a> {
    name: &'static str,
    inputs: Vec<Tensor<f64>>,
    build: Build<'a>,
}

fn op<'a>(
    name: &'static str,
    inputs: Vec<Tensor<f64>>,
    f: impl Fn(&mut Graph<f64>, &[Var]) -> geofuse_numerics::Result<Var> + 'a,
) -> Case<'a> {
    Case {
        name,
        inputs,
        build: Box::new(move |g, _, v| f(g, v)),
    }
}

fn block<'a>(
    name: &'static str,
    inputs: Vec<Tensor<f64>>,
    f: impl Fn(&mut Graph<f64>, &mut Layers<f64>, &[Var]) -> Result<Var> + 'a,
) -> Case<'a> {
    Case {
        name,
        inputs,
        build: Box::new(move |g, p, v| {
            let mut layers = Layers::new(p);
            f(g, &mut layers, v).map_err(num)
        }),
    }
}

/// Network parameters for the block checks. The zero-initialised last flow
/// layer gets small random weights so every refinement iteration, including
/// the warp, carries gradient.
pub fn suite_params() -> Result<ParamSet<f64>> {
    let mut p = init_params::<f64>(SEED)?;
    let w = p.value_mut("flow.update3.weight")?;
    *w = uniform(w.shape(), -0.05, 0.05, SEED + 1);
    Ok(p)
}

/// Runs every case and returns one report per case, in a fixed order.
pub fn gradient_suite(cfg: &GradCheckConfig) -> Result<Vec<GradCase>> {
    let params = suite_params()?;
    let stack = PerceptualStack::<f64>::new();
    let s = |k: u64| SEED.wrapping_add(100 + k);
    // Sampling positions kept away from integer coordinates, where bilinear
    // interpolation has kinks.
    let grid = {
        let mut rng = ChaCha8Rng::seed_from_u64(s(0));
        Tensor::from_fn(&[2, 6, 6], |_| rng.random_range(0..7) as f64 + rng.random_range(0.1..0.9))
    };

    let cases = vec![
        op("conv2d", vec![rand(&[2, 7, 7], s(1)), rand(&[3, 2, 3, 3], s(2)), rand(&[3], s(3))], |g, v| {
            g.conv2d(v[0], v[1], v[2], 1)
        }),
        op(
            "conv2d stride 2",
            vec![rand(&[2, 7, 7], s(4)), rand(&[3, 2, 3, 3], s(5)), rand(&[3], s(6))],
            |g, v| g.conv2d(v[0], v[1], v[2], 2),
        ),
        op("linear", vec![rand(&[5], s(7)), rand(&[4, 5], s(8)), rand(&[4], s(9))], |g, v| {
            g.linear(v[0], v[1], v[2])
        }),
        op("leaky_relu", vec![rand(&[2, 8, 8], s(10))], |g, v| Ok(g.leaky_relu(v[0]))),
        op("sigmoid", vec![uniform(&[2, 8, 8], -4.0, 4.0, s(11))], |g, v| Ok(g.sigmoid(v[0]))),
        op("grid_sample", vec![rand(&[3, 8, 8], s(12)), grid], |g, v| g.grid_sample(v[0], v[1])),
        op(
            "set_max",
            vec![rand(&[2, 5, 5], s(13)), rand(&[2, 5, 5], s(14)), rand(&[2, 5, 5], s(15))],
            |g, v| g.set_max(v),
        ),
        op("concat", vec![rand(&[2, 4, 4], s(16)), rand(&[3, 4, 4], s(17))], |g, v| g.concat(v)),
        op("mul_map", vec![rand(&[3, 6, 6], s(18)), rand(&[1, 6, 6], s(19))], |g, v| g.mul_map(v[0], v[1])),
        op("mul_scalar", vec![rand(&[3, 6, 6], s(20)), rand(&[1], s(21))], |g, v| {
            g.mul_scalar(v[0], v[1])
        }),
        op("mul", vec![rand(&[2, 5, 5], s(22)), rand(&[2, 5, 5], s(23))], |g, v| g.mul(v[0], v[1])),
        op("add", vec![rand(&[2, 5, 5], s(24)), rand(&[2, 5, 5], s(25))], |g, v| g.add(v[0], v[1])),
        op("sub", vec![rand(&[2, 5, 5], s(26)), rand(&[2, 5, 5], s(27))], |g, v| g.sub(v[0], v[1])),
        op("scale", vec![rand(&[2, 5, 5], s(28))], |g, v| Ok(g.scale(v[0], -1.7))),
        op("upsample_nearest", vec![rand(&[2, 4, 4], s(29))], |g, v| g.upsample_nearest(v[0], 2)),
        op("resize_bilinear", vec![rand(&[2, 3, 3], s(30))], |g, v| g.resize_bilinear(v[0], 8, 7, 2.5)),
        op("crop", vec![rand(&[2, 8, 8], s(31))], |g, v| g.crop(v[0], 1, 2, 5, 4)),
        op("reflect_pad", vec![rand(&[2, 5, 6], s(32))], |g, v| g.reflect_pad(v[0], 8, 8)),
        op("mean_abs", vec![rand(&[2, 6, 6], s(33))], |g, v| Ok(g.mean_abs(v[0]))),
        op("sum", vec![rand(&[2, 6, 6], s(34))], |g, v| Ok(g.sum(v[0]))),
        block("encoder", vec![uniform(&[3, 8, 8], 0.0, 1.0, s(40))], |g, l, v| {
            encode(g, l, Encoder::Neighbor, v[0])
        }),
        block(
            "flow refinement",
            vec![rand(&[64, 8, 8], s(41)), rand(&[64, 8, 8], s(42))],
            |g, l, v| {
                let flow = estimate_flow(g, l, v[0], v[1], 2)?;
                warp2d(g, v[0], flow)
            },
        ),
        block(
            "pixel attention",
            vec![
                rand(&[64, 8, 8], s(43)),
                rand(&[64, 8, 8], s(44)),
                uniform(&[1, 8, 8], 0.2, 0.9, s(45)),
                uniform(&[1, 8, 8], 0.2, 0.9, s(46)),
            ],
            |g, l, v| pixel_attention(g, l, v[0], v[1], v[2], v[3]),
        ),
        block("camera attention", vec![rand(&[12], s(47))], |g, l, v| camera_attention(g, l, v[0])),
        block(
            "attention and fusion",
            vec![
                rand(&[4, 6, 6], s(48)),
                rand(&[4, 6, 6], s(49)),
                uniform(&[1, 6, 6], 0.05, 0.95, s(50)),
                uniform(&[1, 6, 6], 0.05, 0.95, s(51)),
                uniform(&[1], 0.05, 0.95, s(52)),
                uniform(&[1], 0.05, 0.95, s(53)),
            ],
            |g, _, v| {
                let a = apply_attention(g, v[0], v[2], v[4])?;
                let b = apply_attention(g, v[1], v[3], v[5])?;
                fuse(g, &[a, b])
            },
        ),
        block(
            "merge and backbone",
            vec![rand(&[64, 7, 6], s(54)), rand(&[64, 7, 6], s(55)), rand(&[3, 7, 6], s(56))],
            |g, l, v| enhance_backbone(g, l, v[0], v[1], Some(v[2])),
        ),
        block(
            "full loss",
            vec![uniform(&[3, 8, 8], 0.0, 1.0, s(57)), uniform(&[3, 8, 8], 0.0, 1.0, s(58))],
            |g, _, v| loss(g, &stack, v[0], v[1], PERCEPTUAL_WEIGHT),
        ),
    ];

    cases
        .into_iter()
        .map(|c| {
            let report = grad_check(&params, &c.inputs, cfg, &c.build)?;
            Ok(GradCase { name: c.name, report })
        })
        .collect()
}
