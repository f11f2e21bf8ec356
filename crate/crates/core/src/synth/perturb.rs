//! Robustness perturbations. `BlockQuant` is a DCT-free JPEG stand-in, not a real codec.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::image::Image;
use crate::error::{CoreError, Result};

/// Block side of the JPEG proxy.
pub const QUANT_BLOCK: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "level", rename_all = "snake_case")]
pub enum Perturbation {
    /// Additive offset, `β ∈ [-1, 1]`.
    Brightness(f64),
    /// Scale around the image mean, `γ ∈ [0, 4]`.
    Contrast(f64),
    /// Additive Gaussian noise, `σ ∈ [0, 1]`.
    GaussianNoise(f64),
    /// Box blur with odd kernel size `k ≥ 1`, edges clamped.
    Blur(usize),
    /// Mid-rise quantization to `levels ≥ 2` values.
    ColorReduce(usize),
    /// Each 8×8 block keeps its mean; deviations are quantized with step `q ∈ (0, 1]`.
    /// `q = 0` is the identity.
    BlockQuant(f64),
}

impl Perturbation {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Perturbation::Brightness(b) => (-1.0..=1.0).contains(&b),
            Perturbation::Contrast(g) => (0.0..=4.0).contains(&g),
            Perturbation::GaussianNoise(s) => (0.0..=1.0).contains(&s),
            Perturbation::Blur(k) => k % 2 == 1,
            Perturbation::ColorReduce(l) => (2..=256).contains(&l),
            Perturbation::BlockQuant(q) => (0.0..=1.0).contains(&q),
        };
        if ok {
            Ok(())
        } else {
            Err(CoreError::BadParameter(format!("perturbation out of range: {self:?}")))
        }
    }

    /// Scalar magnitude, used as the x axis of robustness curves.
    pub fn level(&self) -> f64 {
        match *self {
            Perturbation::Brightness(v) | Perturbation::Contrast(v) | Perturbation::GaussianNoise(v) | Perturbation::BlockQuant(v) => v,
            Perturbation::Blur(k) => k as f64,
            Perturbation::ColorReduce(l) => l as f64,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Perturbation::Brightness(_) => "brightness",
            Perturbation::Contrast(_) => "contrast",
            Perturbation::GaussianNoise(_) => "gaussian_noise",
            Perturbation::Blur(_) => "blur",
            Perturbation::ColorReduce(_) => "color_reduce",
            Perturbation::BlockQuant(_) => "block_quant",
        }
    }
}

/// Applies `p`; `rng` is only drawn from by `GaussianNoise`.
pub fn perturb<R: Rng + ?Sized>(img: &Image, p: Perturbation, rng: &mut R) -> Result<Image> {
    p.validate()?;
    let (c, h, w) = (img.channels, img.height, img.width);
    Ok(match p {
        Perturbation::Brightness(b) => {
            if b == 0.0 {
                return Ok(img.clone());
            }
            Image::from_fn(c, h, w, |ch, y, x| img.get(ch, y, x) + b)
        }
        Perturbation::Contrast(g) => {
            if g == 1.0 {
                return Ok(img.clone());
            }
            let m = img.mean();
            Image::from_fn(c, h, w, |ch, y, x| m + g * (img.get(ch, y, x) - m))
        }
        Perturbation::GaussianNoise(s) => {
            if s == 0.0 {
                return Ok(img.clone());
            }
            let n = Normal::new(0.0, s).expect("validated sigma");
            Image::from_fn(c, h, w, |ch, y, x| img.get(ch, y, x) + n.sample(rng))
        }
        Perturbation::Blur(k) => {
            if k == 1 {
                return Ok(img.clone());
            }
            box_blur(img, k / 2)
        }
        Perturbation::ColorReduce(levels) => {
            let l = levels as f64;
            Image::from_fn(c, h, w, |ch, y, x| ((img.get(ch, y, x) * l).floor().min(l - 1.0)) / (l - 1.0))
        }
        Perturbation::BlockQuant(q) => {
            if q == 0.0 {
                return Ok(img.clone());
            }
            block_quant(img, q)
        }
    })
}

fn box_blur(img: &Image, r: usize) -> Image {
    let (h, w) = (img.height as isize, img.width as isize);
    let r = r as isize;
    let n = ((2 * r + 1) * (2 * r + 1)) as f64;
    Image::from_fn(img.channels, img.height, img.width, |ch, y, x| {
        let mut acc = 0.0;
        for dy in -r..=r {
            for dx in -r..=r {
                let sy = (y as isize + dy).clamp(0, h - 1) as usize;
                let sx = (x as isize + dx).clamp(0, w - 1) as usize;
                acc += img.get(ch, sy, sx);
            }
        }
        acc / n
    })
}

fn block_quant(img: &Image, q: f64) -> Image {
    let mut out = img.clone();
    for ch in 0..img.channels {
        for by in (0..img.height).step_by(QUANT_BLOCK) {
            for bx in (0..img.width).step_by(QUANT_BLOCK) {
                let ys = by..(by + QUANT_BLOCK).min(img.height);
                let xs = bx..(bx + QUANT_BLOCK).min(img.width);
                let count = (ys.len() * xs.len()) as f64;
                let mean = ys.clone().flat_map(|y| xs.clone().map(move |x| (y, x))).map(|(y, x)| img.get(ch, y, x)).sum::<f64>() / count;
                for y in ys.clone() {
                    for x in xs.clone() {
                        let dev = img.get(ch, y, x) - mean;
                        out.set(ch, y, x, mean + (dev / q).round() * q);
                    }
                }
            }
        }
    }
    out
}
