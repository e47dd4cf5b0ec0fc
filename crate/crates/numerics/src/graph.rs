//! Tape-based reverse-mode differentiation over [`Tensor`]s.

use crate::error::{Error, Result};
use crate::kernels;
use crate::param::ParamSet;
use crate::real::{gemm, Real};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    /// Slope 0.01 on the negative side.
    LeakyRelu,
}

pub const LEAKY_SLOPE: f64 = 0.01;

enum Op<T> {
    Leaf,
    Conv2d { input: Var, weight: Var, bias: Var, stride: usize },
    Linear { input: Var, weight: Var, bias: Var },
    Act { input: Var, kind: Activation },
    GridSample { input: Var, grid: Var },
    SetMax { inputs: Vec<Var>, argmax: Vec<u32> },
    Concat { inputs: Vec<Var> },
    MulMap { input: Var, gate: Var },
    MulScalar { input: Var, scalar: Var },
    Mul { a: Var, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Scale { input: Var, factor: T },
    UpsampleNearest { input: Var, factor: usize },
    Resize { input: Var, scale: T },
    Crop { input: Var, top: usize, left: usize },
    ReflectPad { input: Var },
    MeanAbs { input: Var },
    Sum { input: Var },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    param: Option<usize>,
}

/// A recorded computation. Nodes are only ever appended, so creation order
/// is a topological order and the backward sweep is deterministic.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of one scalar output with respect to every leaf that requires
/// them.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

fn same_shape(op: &'static str, a: &Tensor<impl Real>, b: &Tensor<impl Real>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn stable_sigmoid<T: Real>(x: T) -> T {
    let one = T::one();
    let s = if x >= T::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    };
    // Keep the open interval in finite precision.
    let eps = T::epsilon();
    s.max(eps).min(one - eps)
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is kept by [`Graph::backward`].
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A trainable parameter leaf; its gradient can be collected with
    /// [`ParamSet::accumulate_grads`].
    pub fn param(&mut self, params: &ParamSet<T>, name: &str) -> Result<Var> {
        let idx = params
            .index_of(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        let v = self.push(params.get(idx).value.clone(), Op::Leaf, true);
        self.nodes[v.0].param = Some(idx);
        Ok(v)
    }

    /// A parameter used as a frozen constant.
    pub fn frozen_param(&mut self, params: &ParamSet<T>, name: &str) -> Result<Var> {
        let idx = params
            .index_of(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        Ok(self.constant(params.get(idx).value.clone()))
    }

    pub(crate) fn param_leaves(&self) -> impl Iterator<Item = (Var, usize)> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|p| (Var(i), p)))
    }

    /// Hash of every branch decision taken by the non-smooth operations
    /// (leaky ReLU and |x| signs, set-max winners, bilinear sample cells).
    /// Two evaluations with equal signatures lie on the same smooth piece.
    pub fn branch_signature(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        for node in &self.nodes {
            match &node.op {
                Op::Act {
                    input,
                    kind: Activation::LeakyRelu,
                }
                | Op::MeanAbs { input } => {
                    for v in self.value(*input).data() {
                        mix((*v > T::zero()) as u64);
                    }
                }
                Op::SetMax { argmax, .. } => argmax.iter().for_each(|&a| mix(a as u64)),
                Op::GridSample { grid, .. } => {
                    for v in self.value(*grid).data() {
                        mix(v.floor().as_f64() as i64 as u64);
                    }
                }
                _ => {}
            }
        }
        h
    }

    /// Zero-padded cross-correlation, output extent `ceil(input / stride)`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize) -> Result<Var> {
        let out = kernels::conv2d_forward(
            self.value(input),
            self.value(weight),
            self.value(bias),
            stride,
        )?;
        let rg = self.any_grad(&[input, weight, bias]);
        Ok(self.push(out, Op::Conv2d { input, weight, bias, stride }, rg))
    }

    /// `weight · input + bias` for a rank-1 input.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let ws = w.shape();
        if ws.len() != 2 || x.rank() != 1 || ws[1] != x.len() || b.shape() != [ws[0]] {
            return Err(Error::Shape {
                op: "linear",
                expected: vec![ws.first().copied().unwrap_or(0), x.len()],
                actual: ws.to_vec(),
            });
        }
        let mut out = b.data().to_vec();
        gemm(ws[0], ws[1], 1, w.data(), false, x.data(), false, &mut out, true);
        let out = Tensor::new(&[ws[0]], out)?;
        let rg = self.any_grad(&[input, weight, bias]);
        Ok(self.push(out, Op::Linear { input, weight, bias }, rg))
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Var {
        let x = self.value(input);
        let out = match kind {
            Activation::Sigmoid => x.map(stable_sigmoid),
            Activation::LeakyRelu => {
                let slope = T::of(LEAKY_SLOPE);
                x.map(|v| if v >= T::zero() { v } else { slope * v })
            }
        };
        let rg = self.any_grad(&[input]);
        self.push(out, Op::Act { input, kind }, rg)
    }

    pub fn leaky_relu(&mut self, input: Var) -> Var {
        self.activation(input, Activation::LeakyRelu)
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        self.activation(input, Activation::Sigmoid)
    }

    /// Bilinear sampling of `input` (`C×H×W`) at the source pixel positions
    /// in `grid` (`2×H'×W'`, x then y). Taps outside the image read zero.
    pub fn grid_sample(&mut self, input: Var, grid: Var) -> Result<Var> {
        let out = kernels::grid_sample_forward(self.value(input), self.value(grid))?;
        let rg = self.any_grad(&[input, grid]);
        Ok(self.push(out, Op::GridSample { input, grid }, rg))
    }

    /// Elementwise maximum over a set of equally shaped maps. The gradient of
    /// each element goes to the first (lowest index) maximal contributor.
    pub fn set_max(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::Argument("set_max: empty input set".into()))?;
        let shape = self.value(first).shape().to_vec();
        for &v in &inputs[1..] {
            if self.value(v).shape() != shape.as_slice() {
                return Err(Error::shape("set_max", &shape, self.value(v).shape()));
            }
        }
        let mut out = self.value(first).data().to_vec();
        let mut argmax = vec![0u32; out.len()];
        for (k, &v) in inputs.iter().enumerate().skip(1) {
            for ((o, a), &x) in out.iter_mut().zip(argmax.iter_mut()).zip(self.value(v).data()) {
                if x > *o {
                    *o = x;
                    *a = k as u32;
                }
            }
        }
        let out = Tensor::new(&shape, out)?;
        let rg = self.any_grad(inputs);
        Ok(self.push(
            out,
            Op::SetMax {
                inputs: inputs.to_vec(),
                argmax,
            },
            rg,
        ))
    }

    /// Channel concatenation of `C_i×H×W` maps.
    pub fn concat(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::Argument("concat: empty input list".into()))?;
        let (_, h, w) = self.value(first).dims3()?;
        let mut data = Vec::new();
        let mut channels = 0;
        for &v in inputs {
            let (c, hh, ww) = self.value(v).dims3()?;
            if (hh, ww) != (h, w) {
                return Err(Error::shape("concat", &[c, h, w], &[c, hh, ww]));
            }
            channels += c;
            data.extend_from_slice(self.value(v).data());
        }
        let out = Tensor::new(&[channels, h, w], data)?;
        let rg = self.any_grad(inputs);
        Ok(self.push(out, Op::Concat { inputs: inputs.to_vec() }, rg))
    }

    /// `C×H×W` map times a `1×H×W` gate broadcast over channels.
    pub fn mul_map(&mut self, input: Var, gate: Var) -> Result<Var> {
        let (c, h, w) = self.value(input).dims3()?;
        if self.value(gate).shape() != [1, h, w] {
            return Err(Error::shape("mul_map", &[1, h, w], self.value(gate).shape()));
        }
        let n = h * w;
        let g = self.value(gate).data();
        let mut out = self.value(input).data().to_vec();
        for ch in 0..c {
            for (o, &gv) in out[ch * n..(ch + 1) * n].iter_mut().zip(g) {
                *o *= gv;
            }
        }
        let out = Tensor::new(&[c, h, w], out)?;
        let rg = self.any_grad(&[input, gate]);
        Ok(self.push(out, Op::MulMap { input, gate }, rg))
    }

    /// Tensor times a one-element tensor.
    pub fn mul_scalar(&mut self, input: Var, scalar: Var) -> Result<Var> {
        if self.value(scalar).len() != 1 {
            return Err(Error::shape("mul_scalar", &[1], self.value(scalar).shape()));
        }
        let s = self.value(scalar).data()[0];
        let out = self.value(input).map(|v| v * s);
        let rg = self.any_grad(&[input, scalar]);
        Ok(self.push(out, Op::MulScalar { input, scalar }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::new(self.value(a).shape(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Mul { a, b }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let out = Tensor::new(self.value(a).shape(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x - y)
            .collect();
        let out = Tensor::new(self.value(a).shape(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, Op::Sub { a, b }, rg))
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Var {
        let out = self.value(input).map(|v| v * factor);
        let rg = self.any_grad(&[input]);
        self.push(out, Op::Scale { input, factor }, rg)
    }

    /// Nearest-neighbour upsampling of a `C×H×W` map by an integer factor.
    pub fn upsample_nearest(&mut self, input: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(Error::Argument("upsample_nearest: factor must be ≥ 1".into()));
        }
        let (c, h, w) = self.value(input).dims3()?;
        let (ho, wo) = (h * factor, w * factor);
        let x = self.value(input);
        let mut out = Vec::with_capacity(c * ho * wo);
        for ch in 0..c {
            for y in 0..ho {
                for xx in 0..wo {
                    out.push(x.get3(ch, y / factor, xx / factor));
                }
            }
        }
        let out = Tensor::new(&[c, ho, wo], out)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(out, Op::UpsampleNearest { input, factor }, rg))
    }

    /// Bilinear resize (half-pixel centers, clamped edges) with all output
    /// values multiplied by `scale`.
    pub fn resize_bilinear(&mut self, input: Var, out_h: usize, out_w: usize, scale: T) -> Result<Var> {
        let out = kernels::resize_bilinear(self.value(input), out_h, out_w, scale)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(out, Op::Resize { input, scale }, rg))
    }

    pub fn crop(&mut self, input: Var, top: usize, left: usize, height: usize, width: usize) -> Result<Var> {
        let (c, h, w) = self.value(input).dims3()?;
        if top + height > h || left + width > w || height == 0 || width == 0 {
            return Err(Error::Argument(format!(
                "crop {height}×{width} at ({top}, {left}) exceeds {h}×{w}"
            )));
        }
        let x = self.value(input);
        let mut out = Vec::with_capacity(c * height * width);
        for ch in 0..c {
            for y in top..top + height {
                let row = (ch * h + y) * w;
                out.extend_from_slice(&x.data()[row + left..row + left + width]);
            }
        }
        let out = Tensor::new(&[c, height, width], out)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(out, Op::Crop { input, top, left }, rg))
    }

    /// Mirror-pads the bottom and right edges (without repeating the edge
    /// pixel) up to `height×width`.
    pub fn reflect_pad(&mut self, input: Var, height: usize, width: usize) -> Result<Var> {
        let (c, h, w) = self.value(input).dims3()?;
        if height < h || width < w || height - h >= h || width - w >= w {
            return Err(Error::Argument(format!(
                "reflect_pad: cannot pad {h}×{w} to {height}×{width}"
            )));
        }
        let x = self.value(input);
        let mut out = Vec::with_capacity(c * height * width);
        for ch in 0..c {
            for y in 0..height {
                let sy = reflect_index(y, h);
                for xx in 0..width {
                    out.push(x.get3(ch, sy, reflect_index(xx, w)));
                }
            }
        }
        let out = Tensor::new(&[c, height, width], out)?;
        let rg = self.any_grad(&[input]);
        Ok(self.push(out, Op::ReflectPad { input }, rg))
    }

    /// Mean absolute value, a one-element tensor.
    pub fn mean_abs(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let n = T::of(x.len().max(1) as f64);
        let s: T = x.data().iter().map(|v| v.abs()).sum();
        let rg = self.any_grad(&[input]);
        self.push(Tensor::scalar(s / n), Op::MeanAbs { input }, rg)
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s: T = self.value(input).data().iter().copied().sum();
        let rg = self.any_grad(&[input]);
        self.push(Tensor::scalar(s), Op::Sum { input }, rg)
    }

    /// Gradients of the one-element `output` with respect to every node.
    /// Interior gradients are dropped once propagated; leaf gradients remain.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        if self.value(output).len() != 1 {
            return Err(Error::shape("backward", &[1], self.value(output).shape()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[output.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[output.0] = Some(Tensor::full(self.value(output).shape(), T::one()));

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else {
                continue;
            };
            self.propagate(node, &dy, &mut grads);
        }
        Ok(Gradients { grads })
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node<T>, dy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let acc = |grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>| match &mut grads[v.0] {
            Some(existing) => existing.add_scaled(&g, T::one()).expect("gradient shape"),
            slot @ None => *slot = Some(g),
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, weight, bias, stride } => {
                let g = kernels::conv2d_backward(
                    self.value(*input),
                    self.value(*weight),
                    *stride,
                    dy,
                    [self.needs(*input), self.needs(*weight), self.needs(*bias)],
                );
                if let Some(t) = g.input {
                    acc(grads, *input, t);
                }
                if let Some(t) = g.weight {
                    acc(grads, *weight, t);
                }
                if let Some(t) = g.bias {
                    acc(grads, *bias, t);
                }
            }
            Op::Linear { input, weight, bias } => {
                let (x, w) = (self.value(*input), self.value(*weight));
                let (m, n) = (w.shape()[0], w.shape()[1]);
                if self.needs(*input) {
                    let mut dx = vec![T::zero(); n];
                    gemm(n, m, 1, w.data(), true, dy.data(), false, &mut dx, false);
                    acc(grads, *input, Tensor::new(&[n], dx).expect("shape"));
                }
                if self.needs(*weight) {
                    let mut dw = vec![T::zero(); m * n];
                    gemm(m, 1, n, dy.data(), false, x.data(), false, &mut dw, false);
                    acc(grads, *weight, Tensor::new(&[m, n], dw).expect("shape"));
                }
                if self.needs(*bias) {
                    acc(grads, *bias, dy.clone());
                }
            }
            Op::Act { input, kind } => {
                let dx = match kind {
                    Activation::Sigmoid => {
                        let s = &node.value;
                        elementwise(dy, s, |g, s| g * s * (T::one() - s))
                    }
                    Activation::LeakyRelu => {
                        let slope = T::of(LEAKY_SLOPE);
                        elementwise(dy, self.value(*input), |g, x| {
                            if x >= T::zero() {
                                g
                            } else {
                                g * slope
                            }
                        })
                    }
                };
                acc(grads, *input, dx);
            }
            Op::GridSample { input, grid } => {
                let (dx, dg) = kernels::grid_sample_backward(
                    self.value(*input),
                    self.value(*grid),
                    dy,
                    self.needs(*input),
                    self.needs(*grid),
                );
                if let Some(t) = dx {
                    acc(grads, *input, t);
                }
                if let Some(t) = dg {
                    acc(grads, *grid, t);
                }
            }
            Op::SetMax { inputs, argmax } => {
                for (k, &v) in inputs.iter().enumerate() {
                    if !self.needs(v) {
                        continue;
                    }
                    let data = dy
                        .data()
                        .iter()
                        .zip(argmax)
                        .map(|(&g, &a)| if a as usize == k { g } else { T::zero() })
                        .collect();
                    acc(grads, v, Tensor::new(dy.shape(), data).expect("shape"));
                }
            }
            Op::Concat { inputs } => {
                let mut c0 = 0;
                for &v in inputs {
                    let c = self.value(v).shape()[0];
                    if self.needs(v) {
                        acc(grads, v, dy.channels(c0, c0 + c).expect("shape"));
                    }
                    c0 += c;
                }
            }
            Op::MulMap { input, gate } => {
                let (x, g) = (self.value(*input), self.value(*gate));
                let (c, h, w) = x.dims3().expect("shape");
                let n = h * w;
                if self.needs(*input) {
                    let mut dx = dy.data().to_vec();
                    for ch in 0..c {
                        for (d, &gv) in dx[ch * n..(ch + 1) * n].iter_mut().zip(g.data()) {
                            *d *= gv;
                        }
                    }
                    acc(grads, *input, Tensor::new(&[c, h, w], dx).expect("shape"));
                }
                if self.needs(*gate) {
                    let mut dg = vec![T::zero(); n];
                    for ch in 0..c {
                        let xs = &x.data()[ch * n..(ch + 1) * n];
                        let gs = &dy.data()[ch * n..(ch + 1) * n];
                        for ((d, &xv), &gv) in dg.iter_mut().zip(xs).zip(gs) {
                            *d += xv * gv;
                        }
                    }
                    acc(grads, *gate, Tensor::new(&[1, h, w], dg).expect("shape"));
                }
            }
            Op::MulScalar { input, scalar } => {
                let s = self.value(*scalar).data()[0];
                if self.needs(*input) {
                    acc(grads, *input, dy.map(|g| g * s));
                }
                if self.needs(*scalar) {
                    let d: T = dy
                        .data()
                        .iter()
                        .zip(self.value(*input).data())
                        .map(|(&g, &x)| g * x)
                        .sum();
                    let shape = self.value(*scalar).shape().to_vec();
                    acc(grads, *scalar, Tensor::new(&shape, vec![d]).expect("shape"));
                }
            }
            Op::Mul { a, b } => {
                if self.needs(*a) {
                    acc(grads, *a, elementwise(dy, self.value(*b), |g, y| g * y));
                }
                if self.needs(*b) {
                    acc(grads, *b, elementwise(dy, self.value(*a), |g, x| g * x));
                }
            }
            Op::Add { a, b } => {
                if self.needs(*a) {
                    acc(grads, *a, dy.clone());
                }
                if self.needs(*b) {
                    acc(grads, *b, dy.clone());
                }
            }
            Op::Sub { a, b } => {
                if self.needs(*a) {
                    acc(grads, *a, dy.clone());
                }
                if self.needs(*b) {
                    acc(grads, *b, dy.map(|g| -g));
                }
            }
            Op::Scale { input, factor } => {
                let f = *factor;
                acc(grads, *input, dy.map(|g| g * f));
            }
            Op::UpsampleNearest { input, factor } => {
                let (c, h, w) = self.value(*input).dims3().expect("shape");
                let wo = w * factor;
                let mut dx = vec![T::zero(); c * h * w];
                for ch in 0..c {
                    for y in 0..h * factor {
                        for x in 0..wo {
                            dx[(ch * h + y / factor) * w + x / factor] +=
                                dy.data()[(ch * h * factor + y) * wo + x];
                        }
                    }
                }
                acc(grads, *input, Tensor::new(&[c, h, w], dx).expect("shape"));
            }
            Op::Resize { input, scale } => {
                let shape = self.value(*input).shape().to_vec();
                acc(grads, *input, kernels::resize_bilinear_backward(&shape, dy, *scale));
            }
            Op::Crop { input, top, left } => {
                let (c, h, w) = self.value(*input).dims3().expect("shape");
                let (ch_out, ho, wo) = dy.dims3().expect("shape");
                debug_assert_eq!(c, ch_out);
                let mut dx = vec![T::zero(); c * h * w];
                for ch in 0..c {
                    for y in 0..ho {
                        let dst = (ch * h + top + y) * w + left;
                        let src = (ch * ho + y) * wo;
                        dx[dst..dst + wo].copy_from_slice(&dy.data()[src..src + wo]);
                    }
                }
                acc(grads, *input, Tensor::new(&[c, h, w], dx).expect("shape"));
            }
            Op::ReflectPad { input } => {
                let (c, h, w) = self.value(*input).dims3().expect("shape");
                let (_, ho, wo) = dy.dims3().expect("shape");
                let mut dx = vec![T::zero(); c * h * w];
                for ch in 0..c {
                    for y in 0..ho {
                        let sy = reflect_index(y, h);
                        for x in 0..wo {
                            dx[(ch * h + sy) * w + reflect_index(x, w)] +=
                                dy.data()[(ch * ho + y) * wo + x];
                        }
                    }
                }
                acc(grads, *input, Tensor::new(&[c, h, w], dx).expect("shape"));
            }
            Op::MeanAbs { input } => {
                let x = self.value(*input);
                let g = dy.data()[0] / T::of(x.len().max(1) as f64);
                let dx = x.map(|v| {
                    if v > T::zero() {
                        g
                    } else if v < T::zero() {
                        -g
                    } else {
                        T::zero()
                    }
                });
                acc(grads, *input, dx);
            }
            Op::Sum { input } => {
                let g = dy.data()[0];
                let shape = self.value(*input).shape().to_vec();
                acc(grads, *input, Tensor::full(&shape, g));
            }
        }
    }
}

fn reflect_index(i: usize, n: usize) -> usize {
    if i < n {
        i
    } else {
        2 * (n - 1) - i
    }
}

fn elementwise<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("shape")
}
