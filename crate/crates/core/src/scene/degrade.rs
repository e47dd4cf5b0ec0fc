//! Render-degradation simulator: Gaussian blur, bilinear down/up resampling
//! and clipped additive noise.

use geofuse_numerics::{resize_bilinear, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::PosedImage;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationConfig {
    pub blur_sigma: f64,
    pub down_up_factor: usize,
    pub noise_sigma: f64,
    /// Standard deviation of a multiplicative Gaussian perturbation of
    /// depth, `0` keeps depth exact.
    #[serde(default)]
    pub depth_noise: f64,
    pub seed: u64,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        DegradationConfig {
            blur_sigma: 1.5,
            down_up_factor: 2,
            noise_sigma: 0.01,
            depth_noise: 0.0,
            seed: 0,
        }
    }
}

impl DegradationConfig {
    pub fn identity() -> Self {
        DegradationConfig {
            blur_sigma: 0.0,
            down_up_factor: 1,
            noise_sigma: 0.0,
            depth_noise: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.blur_sigma.is_finite()
            && self.blur_sigma >= 0.0
            && self.noise_sigma.is_finite()
            && self.noise_sigma >= 0.0
            && self.depth_noise.is_finite()
            && (0.0..0.5).contains(&self.depth_noise)
            && self.down_up_factor >= 1;
        if !ok {
            return Err(Error::Argument(format!("invalid degradation config {self:?}")));
        }
        Ok(())
    }
}

/// Degraded copy of `image`; pose and intrinsics are untouched, depth too
/// unless `depth_noise > 0`.
pub fn degrade(image: &PosedImage, cfg: &DegradationConfig) -> Result<PosedImage> {
    cfg.validate()?;
    let (_, h, w) = image.rgb.dims3()?;
    let mut rgb = gaussian_blur(&image.rgb, cfg.blur_sigma)?;
    if cfg.down_up_factor > 1 {
        let f = cfg.down_up_factor;
        let small = resize_bilinear(&rgb, h.div_ceil(f), w.div_ceil(f), 1.0)?;
        rgb = resize_bilinear(&small, h, w, 1.0)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    if cfg.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.noise_sigma).expect("finite sigma");
        for v in rgb.data_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    for v in rgb.data_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    let depth = match (&image.depth, cfg.depth_noise > 0.0) {
        (Some(d), true) => {
            let normal = Normal::new(0.0, cfg.depth_noise).expect("finite sigma");
            let mut d = d.clone();
            for z in d.data_mut() {
                *z *= 1.0 + normal.sample(&mut rng);
            }
            Some(d)
        }
        (d, _) => d.clone(),
    };
    Ok(PosedImage {
        rgb,
        depth,
        pose: image.pose,
        intrinsics: image.intrinsics,
    })
}

/// Separable Gaussian blur of every channel of a `[C, H, W]` map with
/// clamp-to-edge borders. The kernel is truncated at 3σ and renormalised;
/// `sigma = 0` returns the input.
pub fn gaussian_blur(x: &Tensor<f64>, sigma: f64) -> Result<Tensor<f64>> {
    let (c, h, w) = x.dims3()?;
    if sigma == 0.0 {
        return Ok(x.clone());
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::Argument(format!("blur sigma must be ≥ 0, got {sigma}")));
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; c * h * w];
    let src = x.data();
    for ch in 0..c {
        for y in 0..h {
            let row = (ch * h + y) * w;
            for xx in 0..w {
                tmp[row + xx] = kernel
                    .iter()
                    .enumerate()
                    .map(|(j, k)| k * src[row + clamp(xx as isize + j as isize - radius, w)])
                    .sum();
            }
        }
    }
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                out[(ch * h + y) * w + xx] = kernel
                    .iter()
                    .enumerate()
                    .map(|(j, k)| k * tmp[(ch * h + clamp(y as isize + j as isize - radius, h)) * w + xx])
                    .sum();
            }
        }
    }
    Ok(Tensor::new(&[c, h, w], out)?)
}
