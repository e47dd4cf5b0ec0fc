//! Raw numeric kernels shared by the graph operations.

use crate::error::{Error, Result};
use crate::real::{gemm, Real};
use crate::tensor::Tensor;

/// Output extent of a zero-padded convolution: `ceil(input / stride)` for odd
/// kernels with `(k - 1) / 2` padding.
pub fn conv2d_output_size(input: usize, kernel: usize, stride: usize) -> usize {
    let pad = (kernel - 1) / 2;
    (input + 2 * pad - kernel) / stride + 1
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    pub fn new(c_in: usize, h: usize, w: usize, k: usize, stride: usize) -> Self {
        ConvGeom {
            c_in,
            h,
            w,
            k,
            stride,
            pad: (k - 1) / 2,
            h_out: conv2d_output_size(h, k, stride),
            w_out: conv2d_output_size(w, k, stride),
        }
    }

    fn rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.h_out * self.w_out
    }
}

/// Output columns `lo..hi` whose input column `ox·stride + kx − pad` lies
/// inside the image.
fn valid_span(kx: usize, g: &ConvGeom) -> (usize, usize) {
    let lo = g.pad.saturating_sub(kx).div_ceil(g.stride);
    // Largest ox with ox·stride + kx − pad ≤ w − 1.
    let limit = g.w + g.pad;
    let hi = if kx >= limit { 0 } else { ((limit - 1 - kx) / g.stride + 1).min(g.w_out) };
    (lo, hi.max(lo))
}

pub(crate) fn im2col<T: Real>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let p = g.cols();
    let mut cols = vec![T::zero(); g.rows() * p];
    for c in 0..g.c_in {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let dst_row = &mut dst[oy * g.w_out..(oy + 1) * g.w_out];
                    let (lo, hi) = valid_span(kx, g);
                    if g.stride == 1 {
                        let off = kx as isize - g.pad as isize;
                        dst_row[lo..hi].copy_from_slice(
                            &src_row[(lo as isize + off) as usize..(hi as isize + off) as usize],
                        );
                    } else {
                        for ox in lo..hi {
                            dst_row[ox] = src_row[ox * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let p = g.cols();
    for c in 0..g.c_in {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let src_row = &src[oy * g.w_out..(oy + 1) * g.w_out];
                    let (lo, hi) = valid_span(kx, g);
                    for ox in lo..hi {
                        dst_row[ox * g.stride + kx - g.pad] += src_row[ox];
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
) -> Result<Tensor<T>> {
    let (c_in, h, w) = x.dims3()?;
    let ws = weight.shape();
    if ws.len() != 4 || ws[2] != ws[3] || ws[2] % 2 == 0 {
        return Err(Error::Argument(format!(
            "conv2d: weight must be C_out×C_in×k×k with odd k, got {ws:?}"
        )));
    }
    let (c_out, k) = (ws[0], ws[2]);
    if ws[1] != c_in {
        return Err(Error::Shape {
            op: "conv2d",
            expected: vec![c_out, c_in, k, k],
            actual: ws.to_vec(),
        });
    }
    if bias.shape() != [c_out] {
        return Err(Error::shape("conv2d bias", &[c_out], bias.shape()));
    }
    if stride == 0 {
        return Err(Error::Argument("conv2d: stride must be at least 1".into()));
    }
    let g = ConvGeom::new(c_in, h, w, k, stride);
    let p = g.cols();
    let mut out = vec![T::zero(); c_out * p];
    for (co, chunk) in out.chunks_mut(p).enumerate() {
        let b = bias.data()[co];
        chunk.iter_mut().for_each(|v| *v = b);
    }
    if k == 1 && stride == 1 {
        gemm(c_out, c_in, p, weight.data(), false, x.data(), false, &mut out, true);
    } else {
        let cols = im2col(x.data(), &g);
        gemm(c_out, g.rows(), p, weight.data(), false, &cols, false, &mut out, true);
    }
    Tensor::new(&[c_out, g.h_out, g.w_out], out)
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

pub(crate) fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    dy: &Tensor<T>,
    need: [bool; 3],
) -> ConvGrads<T> {
    let (c_in, h, w) = x.dims3().expect("validated in forward");
    let ws = weight.shape();
    let (c_out, k) = (ws[0], ws[2]);
    let g = ConvGeom::new(c_in, h, w, k, stride);
    let p = g.cols();
    let direct = k == 1 && stride == 1;

    let mut grads = ConvGrads {
        input: None,
        weight: None,
        bias: None,
    };
    if need[1] {
        let mut dw = vec![T::zero(); c_out * g.rows()];
        if direct {
            gemm(c_out, p, g.rows(), dy.data(), false, x.data(), true, &mut dw, false);
        } else {
            let cols = im2col(x.data(), &g);
            gemm(c_out, p, g.rows(), dy.data(), false, &cols, true, &mut dw, false);
        }
        grads.weight = Some(Tensor::new(ws, dw).expect("shape"));
    }
    if need[2] {
        let db: Vec<T> = dy.data().chunks(p).map(|ch| ch.iter().copied().sum()).collect();
        grads.bias = Some(Tensor::new(&[c_out], db).expect("shape"));
    }
    if need[0] {
        let mut dcols = vec![T::zero(); g.rows() * p];
        gemm(g.rows(), c_out, p, weight.data(), true, dy.data(), false, &mut dcols, false);
        let dx = if direct {
            dcols
        } else {
            let mut dx = vec![T::zero(); c_in * h * w];
            col2im(&dcols, &g, &mut dx);
            dx
        };
        grads.input = Some(Tensor::new(&[c_in, h, w], dx).expect("shape"));
    }
    grads
}

/// Bilinear taps of one sample position: flat source indices (or `None`
/// outside the image) with their weights, plus the fractional offsets.
#[derive(Clone, Copy)]
pub(crate) struct Taps<T> {
    pub idx: [Option<usize>; 4],
    pub wts: [T; 4],
    pub fx: T,
    pub fy: T,
}

pub(crate) fn bilinear_taps<T: Real>(x: T, y: T, h: usize, w: usize) -> Taps<T> {
    let none = Taps {
        idx: [None; 4],
        wts: [T::zero(); 4],
        fx: T::zero(),
        fy: T::zero(),
    };
    if !x.is_finite() || !y.is_finite() {
        return none;
    }
    let lim_x = T::of(w as f64 + 1.0);
    let lim_y = T::of(h as f64 + 1.0);
    let neg = -T::one() - T::one();
    if x < neg || y < neg || x > lim_x || y > lim_y {
        return none;
    }
    let x0f = x.floor();
    let y0f = y.floor();
    let fx = x - x0f;
    let fy = y - y0f;
    let x0 = x0f.as_f64() as i64;
    let y0 = y0f.as_f64() as i64;
    let one = T::one();
    let corners = [(x0, y0), (x0 + 1, y0), (x0, y0 + 1), (x0 + 1, y0 + 1)];
    let wts = [
        (one - fx) * (one - fy),
        fx * (one - fy),
        (one - fx) * fy,
        fx * fy,
    ];
    let mut idx = [None; 4];
    for (slot, &(cx, cy)) in idx.iter_mut().zip(&corners) {
        if cx >= 0 && cy >= 0 && (cx as usize) < w && (cy as usize) < h {
            *slot = Some(cy as usize * w + cx as usize);
        }
    }
    Taps { idx, wts, fx, fy }
}

fn grid_taps<T: Real>(grid: &Tensor<T>, h: usize, w: usize) -> Vec<Taps<T>> {
    let n = grid.shape()[1] * grid.shape()[2];
    let (gx, gy) = grid.data().split_at(n);
    gx.iter()
        .zip(gy)
        .map(|(&x, &y)| bilinear_taps(x, y, h, w))
        .collect()
}

pub(crate) fn check_grid<T: Real>(grid: &Tensor<T>) -> Result<(usize, usize)> {
    match grid.shape() {
        [2, ho, wo] => Ok((*ho, *wo)),
        s => Err(Error::Argument(format!(
            "grid_sample: grid must be 2×H×W (x then y, source pixel units), got {s:?}"
        ))),
    }
}

pub(crate) fn grid_sample_forward<T: Real>(x: &Tensor<T>, grid: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = x.dims3()?;
    let (ho, wo) = check_grid(grid)?;
    let taps = grid_taps(grid, h, w);
    let n = ho * wo;
    let mut out = vec![T::zero(); c * n];
    for ch in 0..c {
        let src = &x.data()[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * n..(ch + 1) * n];
        for (d, t) in dst.iter_mut().zip(&taps) {
            let mut acc = T::zero();
            for j in 0..4 {
                if let Some(i) = t.idx[j] {
                    acc += t.wts[j] * src[i];
                }
            }
            *d = acc;
        }
    }
    Tensor::new(&[c, ho, wo], out)
}

pub(crate) fn grid_sample_backward<T: Real>(
    x: &Tensor<T>,
    grid: &Tensor<T>,
    dy: &Tensor<T>,
    need_input: bool,
    need_grid: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let (c, h, w) = x.dims3().expect("validated in forward");
    let (ho, wo) = (grid.shape()[1], grid.shape()[2]);
    let n = ho * wo;
    let taps = grid_taps(grid, h, w);
    let one = T::one();

    let dx = need_input.then(|| {
        let mut dx = vec![T::zero(); c * h * w];
        for ch in 0..c {
            let dst = &mut dx[ch * h * w..(ch + 1) * h * w];
            let g = &dy.data()[ch * n..(ch + 1) * n];
            for (&gv, t) in g.iter().zip(&taps) {
                for j in 0..4 {
                    if let Some(i) = t.idx[j] {
                        dst[i] += t.wts[j] * gv;
                    }
                }
            }
        }
        Tensor::new(&[c, h, w], dx).expect("shape")
    });

    let dgrid = need_grid.then(|| {
        let mut dg = vec![T::zero(); 2 * n];
        for ch in 0..c {
            let src = &x.data()[ch * h * w..(ch + 1) * h * w];
            let g = &dy.data()[ch * n..(ch + 1) * n];
            for (p, (&gv, t)) in g.iter().zip(&taps).enumerate() {
                let v = |j: usize| t.idx[j].map_or(T::zero(), |i| src[i]);
                let (v00, v10, v01, v11) = (v(0), v(1), v(2), v(3));
                let ddx = (one - t.fy) * (v10 - v00) + t.fy * (v11 - v01);
                let ddy = (one - t.fx) * (v01 - v00) + t.fx * (v11 - v10);
                dg[p] += gv * ddx;
                dg[n + p] += gv * ddy;
            }
        }
        Tensor::new(&[2, ho, wo], dg).expect("shape")
    });
    (dx, dgrid)
}

/// Per-output-index source taps of a one-dimensional bilinear resize
/// (half-pixel centers, edge clamped).
pub(crate) fn resize_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let ratio = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * ratio - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear resize of a `[C, H, W]` map to `out_h×out_w` (half-pixel
/// centers, edge clamped), with every output value multiplied by `scale`.
pub fn resize_bilinear<T: Real>(
    x: &Tensor<T>,
    out_h: usize,
    out_w: usize,
    scale: T,
) -> Result<Tensor<T>> {
    let (c, h, w) = x.dims3()?;
    if h == 0 || w == 0 || out_h == 0 || out_w == 0 {
        return Err(Error::Argument("resize_bilinear: empty extent".into()));
    }
    let ry = resize_taps(h, out_h);
    let rx = resize_taps(w, out_w);
    let mut out = vec![T::zero(); c * out_h * out_w];
    let one = T::one();
    for ch in 0..c {
        let src = &x.data()[ch * h * w..(ch + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ry.iter().enumerate() {
            let fy = T::of(fy);
            for (ox, &(x0, x1, fx)) in rx.iter().enumerate() {
                let fx = T::of(fx);
                let top = (one - fx) * src[y0 * w + x0] + fx * src[y0 * w + x1];
                let bot = (one - fx) * src[y1 * w + x0] + fx * src[y1 * w + x1];
                out[(ch * out_h + oy) * out_w + ox] = scale * ((one - fy) * top + fy * bot);
            }
        }
    }
    Tensor::new(&[c, out_h, out_w], out)
}

pub(crate) fn resize_bilinear_backward<T: Real>(
    in_shape: &[usize],
    dy: &Tensor<T>,
    scale: T,
) -> Tensor<T> {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (out_h, out_w) = (dy.shape()[1], dy.shape()[2]);
    let ry = resize_taps(h, out_h);
    let rx = resize_taps(w, out_w);
    let mut dx = vec![T::zero(); c * h * w];
    let one = T::one();
    for ch in 0..c {
        let dst = &mut dx[ch * h * w..(ch + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ry.iter().enumerate() {
            let fy = T::of(fy);
            for (ox, &(x0, x1, fx)) in rx.iter().enumerate() {
                let fx = T::of(fx);
                let g = scale * dy.data()[(ch * out_h + oy) * out_w + ox];
                dst[y0 * w + x0] += g * (one - fy) * (one - fx);
                dst[y0 * w + x1] += g * (one - fy) * fx;
                dst[y1 * w + x0] += g * fy * (one - fx);
                dst[y1 * w + x1] += g * fy * fx;
            }
        }
    }
    Tensor::new(in_shape, dx).expect("shape")
}
