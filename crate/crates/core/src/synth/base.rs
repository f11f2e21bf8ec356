//! Procedural stand-ins for the main biomedical image modalities.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaseKind {
    /// Colored Gaussian blobs (microscopy-like).
    BlobTexture,
    /// Dark horizontal bands on a light background (blot/gel-like).
    BandTexture,
    /// Sparse bright points on a dark background (FACS-like).
    Scatter,
    /// Smooth gradient with a few flat shapes (macroscopy-like).
    Gradient,
}

impl BaseKind {
    pub const ALL: [BaseKind; 4] = [BaseKind::BlobTexture, BaseKind::BandTexture, BaseKind::Scatter, BaseKind::Gradient];
}

pub fn base_image<R: Rng + ?Sized>(kind: BaseKind, height: usize, width: usize, rng: &mut R) -> Image {
    match kind {
        BaseKind::BlobTexture => blobs(height, width, rng),
        BaseKind::BandTexture => bands(height, width, rng),
        BaseKind::Scatter => scatter(height, width, rng),
        BaseKind::Gradient => gradient(height, width, rng),
    }
}

/// Fully saturated color at `hue ∈ [0, 1)`.
fn hue_rgb(hue: f64) -> [f64; 3] {
    std::array::from_fn(|c| {
        let k = ([5.0, 3.0, 1.0][c] + hue * 6.0) % 6.0;
        1.0 - k.min(4.0 - k).clamp(0.0, 1.0)
    })
}

/// One stain hue per image: a tinted background with Gaussian blobs of varying intensity.
fn blobs<R: Rng + ?Sized>(height: usize, width: usize, rng: &mut R) -> Image {
    let side = height.min(width) as f64;
    let stain = hue_rgb(rng.random_range(0.0..1.0));
    let bg = rng.random_range(0.3..0.5);
    let tint = rng.random_range(0.05..0.2);
    let count = rng.random_range(8..=16);
    let blobs: Vec<(f64, f64, f64, f64)> = (0..count)
        .map(|_| {
            let cy = rng.random_range(0.0..height as f64);
            let cx = rng.random_range(0.0..width as f64);
            let s = rng.random_range(side / 20.0..side / 7.0);
            let amp = rng.random_range(-0.3..0.5);
            (cy, cx, 2.0 * s * s, amp)
        })
        .collect();
    let mut field = vec![0.0f64; height * width];
    for (cy, cx, two_s2, amp) in &blobs {
        for y in 0..height {
            for x in 0..width {
                let d2 = (y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2);
                field[y * width + x] += amp * (-d2 / two_s2).exp();
            }
        }
    }
    Image::from_fn(3, height, width, |c, y, x| bg + tint * (stain[c] - 0.5) + field[y * width + x] * stain[c])
}

fn bands<R: Rng + ?Sized>(height: usize, width: usize, rng: &mut R) -> Image {
    let ground = rng.random_range(0.75..0.95);
    let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.03..0.03));
    let count = rng.random_range(2..=5);
    let rows: Vec<(f64, f64, f64, f64, f64)> = (0..count)
        .map(|_| {
            let center = rng.random_range(0.0..height as f64);
            let half = rng.random_range(1.0..(height as f64 / 12.0).max(1.5));
            let depth = rng.random_range(0.3..0.7);
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let wiggle = rng.random_range(0.0..0.25);
            (center, half, depth, phase, wiggle)
        })
        .collect();
    let noise = Normal::new(0.0, 0.01).expect("valid sigma");
    let grain: Vec<f64> = (0..height * width).map(|_| noise.sample(rng)).collect();
    Image::from_fn(3, height, width, |c, y, x| {
        let mut v = ground + tint[c];
        for (center, half, depth, phase, wiggle) in &rows {
            let along = 1.0 - wiggle * (0.5 + 0.5 * (phase + 6.0 * x as f64 / width as f64).sin());
            let d = (y as f64 + 0.5 - center) / half;
            v -= depth * along * (-0.5 * d * d).exp();
        }
        v + grain[y * width + x]
    })
}

fn scatter<R: Rng + ?Sized>(height: usize, width: usize, rng: &mut R) -> Image {
    let bg = rng.random_range(0.02..0.12);
    let mut img = Image::from_fn(3, height, width, |_, _, _| bg);
    let count = rng.random_range(height * width / 80..=height * width / 30);
    let hue: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.4..1.0));
    let cy = rng.random_range(0.3..0.7) * height as f64;
    let cx = rng.random_range(0.3..0.7) * width as f64;
    let spread = Normal::new(0.0, height.min(width) as f64 / 4.0).expect("valid sigma");
    for _ in 0..count {
        let y = (cy + spread.sample(rng)).round();
        let x = (cx + spread.sample(rng)).round();
        if y < 0.0 || x < 0.0 || y >= height as f64 || x >= width as f64 {
            continue;
        }
        let brightness = rng.random_range(0.6..1.0);
        for c in 0..3 {
            img.set(c, y as usize, x as usize, hue[c] * brightness);
        }
    }
    img
}

fn gradient<R: Rng + ?Sized>(height: usize, width: usize, rng: &mut R) -> Image {
    let start: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.1..0.9));
    let end: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.1..0.9));
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (dy, dx) = angle.sin_cos();
    let shapes: Vec<(bool, f64, f64, f64, [f64; 3])> = (0..rng.random_range(1..=4))
        .map(|_| {
            let circle = rng.random_bool(0.5);
            let cy = rng.random_range(0.0..height as f64);
            let cx = rng.random_range(0.0..width as f64);
            let r = rng.random_range(height.min(width) as f64 / 12.0..height.min(width) as f64 / 5.0);
            let color: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
            (circle, cy, cx, r, color)
        })
        .collect();
    let diag = ((height * height + width * width) as f64).sqrt();
    Image::from_fn(3, height, width, |c, y, x| {
        let (fy, fx) = (y as f64 + 0.5, x as f64 + 0.5);
        let t = (0.5 + ((fy - height as f64 / 2.0) * dy + (fx - width as f64 / 2.0) * dx) / diag).clamp(0.0, 1.0);
        let mut v = start[c] + t * (end[c] - start[c]);
        for (circle, cy, cx, r, color) in &shapes {
            let inside = if *circle {
                (fy - cy).powi(2) + (fx - cx).powi(2) <= r * r
            } else {
                (fy - cy).abs() <= *r && (fx - cx).abs() <= *r
            };
            if inside {
                v = color[c];
            }
        }
        v
    })
}
