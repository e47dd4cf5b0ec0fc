//! Network definition: parameter layout, feature encoders, flow-based
//! refinement, geometry-aware attention, fusion and the enhancement
//! backbone. Every block is generic over the scalar type so the same code
//! trains in `f32` and gradient-checks in `f64`.

mod alignment;
mod attention;

pub use alignment::{encode, estimate_flow, warp2d, Encoder, FLOW_DOWNSAMPLE};
pub use attention::{
    apply_attention, camera_attention, camera_input, enhance_backbone, fuse, normalize_depth, pixel_attention,
};

use std::collections::HashMap;

use geofuse_numerics::{Graph, ParamSet, Real, Result as NumResult, Var};

use crate::error::Result;

/// Feature width of both encoders.
pub const FEATURES: usize = 64;

/// Default number of flow refinement iterations.
pub const FLOW_ITERS: usize = 3;

/// `(prefix, c_in, c_out, kernel)` of every convolution, in checkpoint order.
const CONVS: &[(&str, usize, usize, usize)] = &[
    ("enc_render.conv1", 3, 32, 3),
    ("enc_render.conv2", 32, 64, 3),
    ("enc_render.conv3", 64, 64, 3),
    ("enc_neighbor.conv1", 3, 32, 3),
    ("enc_neighbor.conv2", 32, 64, 3),
    ("enc_neighbor.conv3", 64, 64, 3),
    ("flow.head1", 128, 64, 3),
    ("flow.head2", 64, 64, 3),
    ("flow.head3", 64, 64, 3),
    ("flow.update1", 66, 64, 3),
    ("flow.update2", 64, 32, 3),
    ("flow.update3", 32, 2, 3),
    ("att_pix.conv1", 130, 64, 3),
    ("att_pix.conv2", 64, 1, 3),
    ("merge", 128, 64, 3),
    ("backbone.enc1", 64, 64, 3),
    ("backbone.enc2", 64, 128, 3),
    ("backbone.mid1", 128, 128, 3),
    ("backbone.mid2", 128, 128, 3),
    ("backbone.dec1", 128, 64, 3),
    ("backbone.dec0", 64, 32, 3),
    ("backbone.out", 32, 3, 3),
];

/// `(prefix, n_in, n_out)` of every fully connected layer.
const LINEARS: &[(&str, usize, usize)] = &[("att_cam.fc1", 12, 16), ("att_cam.fc2", 16, 1)];

/// Fresh network parameters. Each tensor draws from its own stream derived
/// from `seed` and its name; the last flow-update layer starts at zero so
/// the first refinement pass leaves the 3D alignment untouched.
pub fn init_params<T: Real>(seed: u64) -> Result<ParamSet<T>> {
    let mut p = ParamSet::new();
    for &(name, c_in, c_out, k) in CONVS {
        p.add_conv(name, c_in, c_out, k, name_seed(seed, name))?;
    }
    for &(name, n_in, n_out) in LINEARS {
        p.add_linear(name, n_in, n_out, name_seed(seed, name))?;
    }
    p.value_mut("flow.update3.weight")?
        .data_mut()
        .iter_mut()
        .for_each(|v| *v = T::zero());
    Ok(p)
}

/// FNV-1a of the name mixed into the base seed.
pub(crate) fn name_seed(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Lazily materialises parameters as graph leaves, once per graph, so a
/// layer applied several times (per neighbor, per flow iteration) shares a
/// single leaf and its gradient.
pub struct Layers<'p, T: Real> {
    params: &'p ParamSet<T>,
    vars: HashMap<String, Var>,
    trainable: bool,
}

impl<'p, T: Real> Layers<'p, T> {
    pub fn new(params: &'p ParamSet<T>) -> Self {
        Layers {
            params,
            vars: HashMap::new(),
            trainable: true,
        }
    }

    /// Parameters enter the graph as constants (inference or frozen stacks).
    pub fn frozen(params: &'p ParamSet<T>) -> Self {
        Layers {
            trainable: false,
            ..Self::new(params)
        }
    }

    pub fn params(&self) -> &'p ParamSet<T> {
        self.params
    }

    pub fn var(&mut self, g: &mut Graph<T>, name: &str) -> NumResult<Var> {
        if let Some(&v) = self.vars.get(name) {
            return Ok(v);
        }
        let v = if self.trainable {
            g.param(self.params, name)?
        } else {
            g.frozen_param(self.params, name)?
        };
        self.vars.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn conv(&mut self, g: &mut Graph<T>, prefix: &str, x: Var, stride: usize) -> NumResult<Var> {
        let w = self.var(g, &format!("{prefix}.weight"))?;
        let b = self.var(g, &format!("{prefix}.bias"))?;
        g.conv2d(x, w, b, stride)
    }

    pub fn linear(&mut self, g: &mut Graph<T>, prefix: &str, x: Var) -> NumResult<Var> {
        let w = self.var(g, &format!("{prefix}.weight"))?;
        let b = self.var(g, &format!("{prefix}.bias"))?;
        g.linear(x, w, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_layout() {
        let p: ParamSet<f32> = init_params(1).unwrap();
        assert_eq!(p.len(), 2 * (CONVS.len() + LINEARS.len()));
        for prefix in ["att_pix.", "att_cam.", "merge.", "backbone.", "enc_render.", "enc_neighbor.", "flow."] {
            assert!(p.iter().any(|q| q.name.starts_with(prefix)), "{prefix}");
        }
        assert!(p.by_name("flow.update3.weight").unwrap().value.data().iter().all(|v| *v == 0.0));
        assert_eq!(p.by_name("att_pix.conv1.weight").unwrap().value.shape(), &[64, 130, 3, 3]);
    }

    #[test]
    fn init_is_seeded() {
        let a: ParamSet<f32> = init_params(3).unwrap();
        let b: ParamSet<f32> = init_params(3).unwrap();
        let c: ParamSet<f32> = init_params(4).unwrap();
        let w = |p: &ParamSet<f32>| p.by_name("merge.weight").unwrap().value.clone();
        assert_eq!(w(&a), w(&b));
        assert_ne!(w(&a), w(&c));
        // Same-shaped layers get different draws.
        assert_ne!(
            a.by_name("enc_render.conv1.weight").unwrap().value,
            a.by_name("enc_neighbor.conv1.weight").unwrap().value
        );
    }
}
