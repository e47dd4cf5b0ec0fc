//! Central finite-difference verification of analytic gradients.

use std::cell::OnceCell;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::param::ParamSet;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Initial finite-difference step. A probe whose `±step` evaluations
    /// take different branches of a non-smooth operation (see
    /// [`Graph::branch_signature`]) is retried with the step divided by ten,
    /// up to [`MAX_REFINEMENTS`] times.
    pub step: f64,
    /// Entries probed per tensor; tensors at most this large are checked
    /// exhaustively, larger ones on a seeded random subset.
    pub max_entries: usize,
    /// Denominator floor of the relative error.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-3,
            max_entries: 48,
            floor: 1e-6,
            seed: 0x5eed,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Max over probed entries of `|analytic − numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    /// Tensor name and flat index of the worst entry.
    pub worst: String,
    pub checked: usize,
    /// Probes where every step straddled a kink; their numeric value uses the
    /// smallest step.
    pub kinked: usize,
}

/// Step reductions tried when a probe straddles a kink.
pub const MAX_REFINEMENTS: usize = 4;

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Compares analytic and numeric gradients of a graph fragment.
///
/// `build` receives a fresh graph, the (possibly perturbed) parameters and one
/// gradient-tracking leaf per entry of `inputs`, and returns the fragment
/// output. The output is reduced to a scalar by a fixed random projection, so
/// every output element contributes. Numeric derivatives project the
/// elementwise output difference rather than differencing two projected
/// scalars, which keeps cancellation error at the scale of individual
/// outputs instead of their (much larger) weighted sum.
pub fn grad_check<F>(
    params: &ParamSet<f64>,
    inputs: &[Tensor<f64>],
    cfg: &GradCheckConfig,
    build: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &ParamSet<f64>, &[Var]) -> Result<Var>,
{
    let projection: OnceCell<Tensor<f64>> = OnceCell::new();
    let objective = |params: &ParamSet<f64>, inputs: &[Tensor<f64>], with_grad: bool| -> Result<(Vec<f64>, u64, Option<(Graph<f64>, Var, Vec<Var>)>)> {
        let mut g = Graph::new();
        let leaves: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let out = build(&mut g, params, &leaves)?;
        let shape = g.value(out).shape().to_vec();
        let proj = projection.get_or_init(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xa5a5);
            Tensor::from_fn(&shape, |_| rng.random_range(-1.0..1.0))
        });
        if proj.shape() != shape.as_slice() {
            return Err(Error::shape("grad_check output", proj.shape(), &shape));
        }
        let w = g.constant(proj.clone());
        let prod = g.mul(out, w)?;
        let s = g.sum(prod);
        let value = g.value(s).data()[0];
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("objective evaluated to {value}")));
        }
        let out = g.value(out).data().to_vec();
        let sig = g.branch_signature();
        Ok((out, sig, with_grad.then_some((g, s, leaves))))
    };

    let (_, sig0, built) = objective(params, inputs, true)?;
    let (g, s, leaves) = built.expect("requested");
    let grads = g.backward(s)?;
    let projection = projection.get().expect("set by the first evaluation").data();

    let mut analytic_params = Vec::new();
    for (var, idx) in g.param_leaves() {
        let grad = grads.get(var).cloned();
        analytic_params.push((idx, grad));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked: 0,
        kinked: 0,
    };
    let record = |report: &mut GradCheckReport, name: String, a: f64, n: f64| -> Result<()> {
        if !a.is_finite() || !n.is_finite() {
            return Err(Error::NonFinite(format!("{name}: analytic {a}, numeric {n}")));
        }
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(cfg.floor);
        report.checked += 1;
        if rel > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = rel.max(report.max_rel_error);
            report.worst = format!("{name} (analytic {a:.6e}, numeric {n:.6e})");
        }
        Ok(())
    };
    // Numeric derivative along one coordinate; `eval(δ)` evaluates the
    // fragment with that coordinate shifted by δ.
    let derivative = |report: &mut GradCheckReport, eval: &mut dyn FnMut(f64) -> Result<(Vec<f64>, u64)>| -> Result<f64> {
        let mut h = cfg.step;
        for attempt in 0..=MAX_REFINEMENTS {
            let (fp, sp) = eval(h)?;
            let (fm, sm) = eval(-h)?;
            let smooth = sp == sig0 && sm == sig0;
            if smooth || attempt == MAX_REFINEMENTS {
                if !smooth {
                    report.kinked += 1;
                }
                return Ok(central_difference(projection, &fp, &fm, h));
            }
            h /= 10.0;
        }
        unreachable!("the last attempt always returns")
    };

    // Parameters used by the fragment.
    let mut seen = std::collections::BTreeSet::new();
    for (idx, grad) in analytic_params {
        if !seen.insert(idx) {
            continue;
        }
        let p = params.get(idx);
        let n = p.value.len();
        let probes = pick(&mut rng, n, cfg.max_entries);
        let mut work = params.clone();
        for e in probes {
            let orig = p.value.data()[e];
            let numeric = derivative(&mut report, &mut |d| {
                work.get_mut(idx).value.data_mut()[e] = orig + d;
                let (f, sig, _) = objective(&work, inputs, false)?;
                work.get_mut(idx).value.data_mut()[e] = orig;
                Ok((f, sig))
            })?;
            let a = grad.as_ref().map_or(0.0, |t| t.data()[e]);
            record(&mut report, format!("{}[{e}]", p.name), a, numeric)?;
        }
    }

    // Explicit inputs.
    for (k, t) in inputs.iter().enumerate() {
        let grad = grads.get(leaves[k]).cloned();
        let probes = pick(&mut rng, t.len(), cfg.max_entries);
        let mut work = inputs.to_vec();
        for e in probes {
            let orig = t.data()[e];
            let numeric = derivative(&mut report, &mut |d| {
                work[k].data_mut()[e] = orig + d;
                let (f, sig, _) = objective(params, &work, false)?;
                work[k].data_mut()[e] = orig;
                Ok((f, sig))
            })?;
            let a = grad.as_ref().map_or(0.0, |t| t.data()[e]);
            record(&mut report, format!("input{k}[{e}]"), a, numeric)?;
        }
    }
    Ok(report)
}

fn central_difference(projection: &[f64], plus: &[f64], minus: &[f64], h: f64) -> f64 {
    let diff: f64 = projection
        .iter()
        .zip(plus.iter().zip(minus))
        .map(|(w, (p, m))| w * (p - m))
        .sum();
    diff / (2.0 * h)
}

fn pick(rng: &mut ChaCha8Rng, n: usize, max: usize) -> Vec<usize> {
    if n <= max {
        (0..n).collect()
    } else {
        let mut v = sample(rng, n, max).into_vec();
        v.sort_unstable();
        v
    }
}
