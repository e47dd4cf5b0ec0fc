//! Training objective: pixel L1 plus a small L1 penalty in the feature
//! space of a frozen, seeded convolutional stack.

use geofuse_numerics::{Graph, ParamSet, Real, Tensor, Var};

use crate::error::{Error, Result};
use crate::model::Layers;

/// Seed of the frozen feature stack; never changes between releases.
pub const PERCEPTUAL_SEED: u64 = 0x5eed_f00d;

/// Default weight of the feature-space term.
pub const PERCEPTUAL_WEIGHT: f64 = 1e-3;

const STACK: &[(&str, usize, usize)] = &[
    ("perceptual.conv1", 3, 16),
    ("perceptual.conv2", 16, 32),
    ("perceptual.conv3", 32, 64),
];

/// Three stride-2 convolutions (3→16→32→64) with leaky ReLU between,
/// He-initialised from [`PERCEPTUAL_SEED`] and never trained.
pub struct PerceptualStack<T: Real> {
    params: ParamSet<T>,
}

impl<T: Real> PerceptualStack<T> {
    pub fn new() -> Self {
        let mut params = ParamSet::new();
        for (i, &(name, c_in, c_out)) in STACK.iter().enumerate() {
            params
                .add_conv(name, c_in, c_out, 3, PERCEPTUAL_SEED + i as u64)
                .expect("unique names");
        }
        PerceptualStack { params }
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn features(&self, g: &mut Graph<T>, image: Var) -> Result<Var> {
        let mut layers = Layers::frozen(&self.params);
        let mut x = image;
        for (i, &(name, _, _)) in STACK.iter().enumerate() {
            x = layers.conv(g, name, x, 2)?;
            if i + 1 < STACK.len() {
                x = g.leaky_relu(x);
            }
        }
        Ok(x)
    }
}

impl<T: Real> Default for PerceptualStack<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// `mean|pred − target| + weight · mean|ω(pred) − ω(target)|` as a `[1]`
/// node.
pub fn loss<T: Real>(
    g: &mut Graph<T>,
    stack: &PerceptualStack<T>,
    pred: Var,
    target: Var,
    weight: f64,
) -> Result<Var> {
    if g.value(pred).shape() != g.value(target).shape() {
        return Err(Error::Argument(format!(
            "loss inputs differ in shape: {:?} vs {:?}",
            g.value(pred).shape(),
            g.value(target).shape()
        )));
    }
    let diff = g.sub(pred, target)?;
    let pixel = g.mean_abs(diff);
    if weight == 0.0 {
        return Ok(pixel);
    }
    let fp = stack.features(g, pred)?;
    let ft = stack.features(g, target)?;
    let fdiff = g.sub(fp, ft)?;
    let feat = g.mean_abs(fdiff);
    let feat = g.scale(feat, T::of(weight));
    Ok(g.add(pixel, feat)?)
}

/// Scalar loss between two images.
pub fn loss_value(pred: &Tensor<f64>, target: &Tensor<f64>, weight: f64) -> Result<f64> {
    let stack = PerceptualStack::<f64>::new();
    let mut g = Graph::new();
    let p = g.constant(pred.clone());
    let t = g.constant(target.clone());
    let l = loss(&mut g, &stack, p, t, weight)?;
    Ok(g.value(l).data()[0])
}
