//! Relevance masks from depth maps and ground truth, and mask propagation
//! through layer geometry.
//!
//! Depth is compared in quantile space. A pixel's quantile is its mid-rank
//! `(#less + #equal/2) / N`, so a window `[lo, hi]` selects the same share of
//! pixels regardless of how depth values are scaled.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::conv::{patch_relevance, ConvSpec, PatchRule};
use crate::error::{Error, Result};
use crate::mask::{DepthMap, PixelMask};

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GtObject {
    /// `[x, y, w, h]` in pixels.
    #[serde(rename = "box")]
    pub bbox: [usize; 4],
    /// Run-length encoded `[start, length]` pairs over row-major pixel indices.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixels: Option<Vec<[usize; 2]>>,
}

impl GtObject {
    pub fn from_box(x: usize, y: usize, w: usize, h: usize) -> Self {
        GtObject { bbox: [x, y, w, h], pixels: None }
    }
}

/// Labeled object regions for one image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub width: usize,
    pub height: usize,
    pub objects: Vec<GtObject>,
}

impl GroundTruth {
    pub fn new(width: usize, height: usize, objects: Vec<GtObject>) -> Result<Self> {
        let gt = GroundTruth { width, height, objects };
        gt.validate()?;
        Ok(gt)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Validation("ground truth image dims must be >= 1".into()));
        }
        let n = self.width * self.height;
        for (i, obj) in self.objects.iter().enumerate() {
            let [x, y, w, h] = obj.bbox;
            if w == 0 || h == 0 || x + w > self.width || y + h > self.height {
                return Err(Error::Validation(format!(
                    "object {i}: box {:?} not inside {}x{} image",
                    obj.bbox, self.width, self.height
                )));
            }
            for &[start, len] in obj.pixels.iter().flatten() {
                if start + len > n {
                    return Err(Error::Validation(format!(
                        "object {i}: pixel run [{start}, {len}] exceeds {n} pixels"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let gt: GroundTruth = serde_json::from_str(text)?;
        gt.validate()?;
        Ok(gt)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Row-major pixel indices of one object. Explicit pixel runs win over the box.
    pub fn object_pixels(&self, i: usize) -> Vec<usize> {
        let obj = &self.objects[i];
        match &obj.pixels {
            Some(runs) => runs.iter().flat_map(|&[s, l]| s..s + l).collect(),
            None => {
                let [x, y, w, h] = obj.bbox;
                (y..y + h).flat_map(|r| (x..x + w).map(move |c| r * self.width + c)).collect()
            }
        }
    }

    /// Union of all object pixels.
    pub fn mask(&self) -> Result<PixelMask> {
        let mut mask = PixelMask::filled(self.height, self.width, false)?;
        for i in 0..self.objects.len() {
            for p in self.object_pixels(i) {
                mask.set(p / self.width, p % self.width, true);
            }
        }
        Ok(mask)
    }

    fn check_against(&self, depth: &DepthMap) -> Result<()> {
        if depth.dims() != (self.height, self.width) {
            return Err(Error::Shape(format!(
                "depth map {}x{} vs ground truth {}x{}",
                depth.height(),
                depth.width(),
                self.height,
                self.width
            )));
        }
        Ok(())
    }
}

/// Depth-quantile window `[lo, hi]` and the amount each side grows per round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdWindow {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for ThresholdWindow {
    fn default() -> Self {
        ThresholdWindow { lo: 0.30, hi: 0.70, step: 0.05 }
    }
}

impl ThresholdWindow {
    pub fn new(lo: f64, hi: f64, step: f64) -> Result<Self> {
        let w = ThresholdWindow { lo, hi, step };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.lo && self.lo < self.hi && self.hi <= 1.0) {
            return Err(Error::Validation(format!("need 0 <= lo < hi <= 1, got [{}, {}]", self.lo, self.hi)));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::Validation(format!("step must be > 0, got {}", self.step)));
        }
        Ok(())
    }

    /// Upper bound on expansion rounds before the window reaches `[0, 1]`.
    pub fn max_iterations(&self) -> usize {
        (self.lo.max(1.0 - self.hi) / self.step - EPS).ceil().max(0.0) as usize + 1
    }

    /// Window after `lo_steps` and `hi_steps` expansions, clamped to `[0, 1]`.
    pub fn expanded(&self, lo_steps: usize, hi_steps: usize) -> (f64, f64) {
        ((self.lo - lo_steps as f64 * self.step).max(0.0), (self.hi + hi_steps as f64 * self.step).min(1.0))
    }
}

/// Mid-rank quantile of every pixel's depth.
pub fn depth_quantiles(depth: &DepthMap) -> Vec<f64> {
    let values = depth.values();
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut q = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let mid = (2 * i + (j - i)) as f64 / (2 * n) as f64;
        for &p in &order[i..j] {
            q[p] = mid;
        }
        i = j;
    }
    q
}

#[inline]
fn in_window(q: f64, lo: f64, hi: f64) -> bool {
    q >= lo - EPS && q <= hi + EPS
}

fn window_mask(depth: &DepthMap, quantiles: &[f64], lo: f64, hi: f64) -> Result<PixelMask> {
    PixelMask::from_vec(depth.height(), depth.width(), quantiles.iter().map(|&q| in_window(q, lo, hi)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdOutcome {
    #[serde(skip)]
    pub mask: PixelMask,
    /// Expansion rounds performed.
    pub iterations: usize,
    pub final_lo: f64,
    pub final_hi: f64,
    /// Fraction of ground-truth pixels inside the final mask.
    pub gt_coverage: f64,
    pub relevant_fraction: f64,
    /// Set when the ground truth has no objects; the mask is the initial window.
    pub empty_ground_truth: bool,
}

/// Thresholds the depth map to `window`, widening it until every
/// ground-truth pixel is relevant.
pub fn mask_from_threshold(depth: &DepthMap, gt: &GroundTruth, window: &ThresholdWindow) -> Result<ThresholdOutcome> {
    mask_from_threshold_with_coverage(depth, gt, window, 1.0)
}

/// As [`mask_from_threshold`], stopping once `coverage` of the ground-truth
/// pixels are relevant.
pub fn mask_from_threshold_with_coverage(
    depth: &DepthMap,
    gt: &GroundTruth,
    window: &ThresholdWindow,
    coverage: f64,
) -> Result<ThresholdOutcome> {
    window.validate()?;
    gt.check_against(depth)?;
    if !(coverage > 0.0 && coverage <= 1.0) {
        return Err(Error::Validation(format!("coverage fraction {coverage} outside (0,1]")));
    }
    let quantiles = depth_quantiles(depth);
    let gt_q: Vec<f64> = gt
        .mask()?
        .as_slice()
        .iter()
        .zip(&quantiles)
        .filter_map(|(&r, &q)| r.then_some(q))
        .collect();

    let (mut lo_steps, mut hi_steps, mut iterations) = (0, 0, 0);
    let required = ((coverage * gt_q.len() as f64) - EPS).ceil() as usize;
    let (lo, hi) = loop {
        let (lo, hi) = window.expanded(lo_steps, hi_steps);
        let covered = gt_q.iter().filter(|&&q| in_window(q, lo, hi)).count();
        if covered >= required {
            break (lo, hi);
        }
        let grow_lo = lo > 0.0 && gt_q.iter().any(|&q| q < lo - EPS);
        let grow_hi = hi < 1.0 && gt_q.iter().any(|&q| q > hi + EPS);
        if !grow_lo && !grow_hi {
            // Unreachable for finite quantiles: [0, 1] holds every pixel.
            break (lo, hi);
        }
        lo_steps += grow_lo as usize;
        hi_steps += grow_hi as usize;
        iterations += 1;
    };

    let mask = window_mask(depth, &quantiles, lo, hi)?;
    let covered = gt_q.iter().filter(|&&q| in_window(q, lo, hi)).count();
    Ok(ThresholdOutcome {
        relevant_fraction: mask.relevant_fraction(),
        mask,
        iterations,
        final_lo: lo,
        final_hi: hi,
        gt_coverage: if gt_q.is_empty() { 1.0 } else { covered as f64 / gt_q.len() as f64 },
        empty_ground_truth: gt_q.is_empty(),
    })
}

/// Depth bin index for bins of `bin_width` over `[0, 1]`; the last bin is closed.
pub fn depth_bin(depth: f64, bin_width: f64) -> usize {
    let bins = (1.0 / bin_width - EPS).ceil().max(1.0) as usize;
    ((depth / bin_width + EPS).floor() as usize).min(bins - 1)
}

/// Marks every pixel whose depth bin is occupied by some ground-truth pixel.
pub fn mask_from_gt_depth_levels(depth: &DepthMap, gt: &GroundTruth, bin_width: f64) -> Result<PixelMask> {
    if !(bin_width > 0.0 && bin_width <= 1.0) {
        return Err(Error::Validation(format!("bin width {bin_width} outside (0,1]")));
    }
    gt.check_against(depth)?;
    let gt_mask = gt.mask()?;
    let bins = depth_bin(1.0, bin_width) + 1;
    let mut occupied = vec![false; bins];
    for (&r, &d) in gt_mask.as_slice().iter().zip(depth.values()) {
        if r {
            occupied[depth_bin(d, bin_width)] = true;
        }
    }
    PixelMask::from_vec(
        depth.height(),
        depth.width(),
        depth.values().iter().map(|&d| occupied[depth_bin(d, bin_width)]).collect(),
    )
}

/// Output-resolution mask for a conv layer: a position is relevant when
/// its receptive field satisfies `rule`. Matches the retained positions of
/// [`crate::conv::conv_focused`].
pub fn propagate_mask(mask: &PixelMask, spec: &ConvSpec, rule: PatchRule) -> Result<PixelMask> {
    patch_relevance(mask, spec.window(), rule)
}
