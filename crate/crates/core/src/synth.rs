//! Synthetic depth maps, masks, and tensors for tests, benchmarks, and demos.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::mask::{DepthMap, PixelMask};
use crate::tensor::{Shape4, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Depth rising linearly from 0 at the left column to 1 at the right.
pub fn horizontal_ramp(height: usize, width: usize) -> Result<DepthMap> {
    let denom = (width.max(2) - 1) as f64;
    DepthMap::from_fn(height, width, |_, w| w as f64 / denom)
}

/// Columns `< split` at depth `left`, the rest at `right`.
pub fn two_plateaus(height: usize, width: usize, split: usize, left: f64, right: f64) -> Result<DepthMap> {
    DepthMap::from_fn(height, width, |_, w| if w < split { left } else { right })
}

/// Depth proportional to distance from the image center, 1 at the corners.
pub fn radial(height: usize, width: usize) -> Result<DepthMap> {
    let (cy, cx) = ((height as f64 - 1.0) / 2.0, (width as f64 - 1.0) / 2.0);
    let max = (cy * cy + cx * cx).sqrt().max(f64::MIN_POSITIVE);
    DepthMap::from_fn(height, width, |h, w| {
        let (dy, dx) = (h as f64 - cy, w as f64 - cx);
        ((dy * dy + dx * dx).sqrt() / max).min(1.0)
    })
}

/// Smooth random depth: a sum of a few random radial bumps, rescaled to `[0, 1]`.
pub fn random_depth(height: usize, width: usize, rng: &mut impl Rng) -> Result<DepthMap> {
    let bumps: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.gen_range(0.0..height as f64),
                rng.gen_range(0.0..width as f64),
                rng.gen_range(1.0..(height.max(width) as f64).max(2.0)),
                rng.gen_range(-1.0..1.0),
            )
        })
        .collect();
    let raw: Vec<f64> = (0..height * width)
        .map(|i| {
            let (h, w) = ((i / width) as f64, (i % width) as f64);
            bumps
                .iter()
                .map(|&(cy, cx, r, a)| a * (-((h - cy).powi(2) + (w - cx).powi(2)) / (r * r)).exp())
                .sum::<f64>()
                + 1e-3 * (h + w)
        })
        .collect();
    let (lo, hi) = raw.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    DepthMap::new(height, width, raw.iter().map(|v| ((v - lo) / span).clamp(0.0, 1.0)).collect())
}

/// Union of `blobs` random axis-aligned rectangles.
pub fn random_blob_mask(height: usize, width: usize, blobs: usize, rng: &mut impl Rng) -> Result<PixelMask> {
    let mut mask = PixelMask::filled(height, width, false)?;
    for _ in 0..blobs {
        let bh = rng.gen_range(1..=height);
        let bw = rng.gen_range(1..=width);
        let top = rng.gen_range(0..=height - bh);
        let left = rng.gen_range(0..=width - bw);
        mask = mask.union(&PixelMask::rect(height, width, top, left, bh, bw)?)?;
    }
    Ok(mask)
}

/// Each pixel independently relevant with probability `p`.
pub fn random_pixel_mask(height: usize, width: usize, p: f64, rng: &mut impl Rng) -> Result<PixelMask> {
    PixelMask::from_fn(height, width, |_, _| rng.gen_bool(p))
}

/// Uniform values in `[-1, 1)`.
pub fn random_tensor(shape: Shape4, rng: &mut impl Rng) -> Result<Tensor> {
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0f32..1.0))
}
