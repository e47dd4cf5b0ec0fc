//! Image quality metrics on `[C, H, W]` maps with values in `[0, 1]`.

use geofuse_numerics::Tensor;

use crate::error::{Error, Result};

/// Reported PSNR for identical images.
pub const PSNR_CAP: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn same_shape(a: &Tensor<f64>, b: &Tensor<f64>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Argument(format!(
            "metric inputs differ in shape: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub fn mse(a: &Tensor<f64>, b: &Tensor<f64>) -> Result<f64> {
    same_shape(a, b)?;
    if a.is_empty() {
        return Err(Error::Argument("metric inputs are empty".into()));
    }
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// `20·log10(1/√MSE)` in dB, capped at [`PSNR_CAP`].
pub fn psnr(a: &Tensor<f64>, b: &Tensor<f64>) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((20.0 * (1.0 / m.sqrt()).log10()).min(PSNR_CAP))
}

/// Single-scale SSIM of the channel-mean grayscale images, 11×11 Gaussian
/// window (σ = 1.5), dynamic range 1, averaged over every window position
/// that fits inside the image.
pub fn ssim(a: &Tensor<f64>, b: &Tensor<f64>) -> Result<f64> {
    same_shape(a, b)?;
    let (c, h, w) = a.dims3()?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Argument(format!(
            "SSIM needs images of at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {h}×{w}"
        )));
    }
    let gray = |t: &Tensor<f64>| -> Vec<f64> {
        (0..h * w)
            .map(|p| (0..c).map(|ch| t.data()[ch * h * w + p]).sum::<f64>() / c as f64)
            .collect()
    };
    let (ga, gb) = (gray(a), gray(b));

    let r = SSIM_WINDOW as isize / 2;
    let g1: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let total: f64 = g1.iter().sum();
    let g1: Vec<f64> = g1.iter().map(|v| v / total).collect();

    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut acc = 0.0;
    for y in 0..oh {
        for x in 0..ow {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (dy, wy) in g1.iter().enumerate() {
                for (dx, wx) in g1.iter().enumerate() {
                    let wt = wy * wx;
                    let p = (y + dy) * w + x + dx;
                    let (va, vb) = (ga[p], gb[p]);
                    ma += wt * va;
                    mb += wt * vb;
                    saa += wt * va * va;
                    sbb += wt * vb * vb;
                    sab += wt * va * vb;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    Ok(acc / (oh * ow) as f64)
}
