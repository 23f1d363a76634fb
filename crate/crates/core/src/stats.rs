//! Corpus statistics over paired depth maps (`<stem>.pgm`) and ground
//! truth files (`<stem>.json`).

use std::collections::BTreeMap;
use std::ffi::OsStr;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pgm::depth_read;
use crate::relevance::{mask_from_threshold, GroundTruth, ThresholdWindow};

pub const FRACTION_BINS: usize = 10;
pub const DEPTH_LEVELS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageStat {
    pub stem: String,
    pub relevant_pixels: usize,
    pub total_pixels: usize,
    pub relevant_fraction: f64,
    pub iterations: usize,
    pub empty_ground_truth: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub window: ThresholdWindow,
    pub image_count: usize,
    pub images: Vec<ImageStat>,
    /// Relevant-fraction histogram in 10%-wide bins; the last bin includes 1.0.
    pub histogram: Vec<HistogramBin>,
    pub mean_irrelevant: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthLevelBin {
    pub lo: f64,
    pub hi: f64,
    pub objects: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthLevelStats {
    pub image_count: usize,
    pub object_count: usize,
    /// Objects binned by median ground-truth depth into 0.2-wide levels.
    pub levels: Vec<DepthLevelBin>,
    pub warnings: Vec<String>,
}

struct Pair {
    stem: String,
    depth: PathBuf,
    gt: PathBuf,
}

fn files_by_stem(dir: &Path, ext: &str) -> Result<BTreeMap<String, PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension() == Some(OsStr::new(ext)) {
            if let Some(stem) = path.file_stem().and_then(OsStr::to_str) {
                out.insert(stem.to_string(), path);
            }
        }
    }
    Ok(out)
}

fn pair_files(depth_dir: &Path, gt_dir: &Path, warnings: &mut Vec<String>) -> Result<Vec<Pair>> {
    let depths = files_by_stem(depth_dir, "pgm")?;
    let mut gts = files_by_stem(gt_dir, "json")?;
    let mut pairs = Vec::new();
    for (stem, depth) in depths {
        match gts.remove(&stem) {
            Some(gt) => pairs.push(Pair { stem, depth, gt }),
            None => warnings.push(format!("{stem}: depth map has no ground truth file")),
        }
    }
    for stem in gts.keys() {
        warnings.push(format!("{stem}: ground truth has no depth map"));
    }
    Ok(pairs)
}

/// Loads and processes every pair in parallel, keeping stem order. Failed
/// pairs become warnings.
fn process<T: Send>(
    pairs: &[Pair],
    warnings: &mut Vec<String>,
    f: impl Fn(&Pair) -> Result<T> + Sync,
) -> Vec<T> {
    let results: Vec<Result<T>> = pairs.par_iter().map(&f).collect();
    let mut ok = Vec::new();
    for (pair, r) in pairs.iter().zip(results) {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => warnings.push(format!("{}: {e}", pair.stem)),
        }
    }
    ok
}

pub fn fraction_bin(relevant: usize, total: usize) -> usize {
    (relevant * FRACTION_BINS / total).min(FRACTION_BINS - 1)
}

/// Runs the threshold mask pipeline on every pair and aggregates
/// relevant-pixel statistics.
pub fn corpus_scan(depth_dir: impl AsRef<Path>, gt_dir: impl AsRef<Path>, window: &ThresholdWindow) -> Result<CorpusStats> {
    window.validate()?;
    let mut warnings = Vec::new();
    let pairs = pair_files(depth_dir.as_ref(), gt_dir.as_ref(), &mut warnings)?;
    let images = process(&pairs, &mut warnings, |pair| {
        let depth = depth_read(&pair.depth)?;
        let gt = GroundTruth::read(&pair.gt)?;
        let out = mask_from_threshold(&depth, &gt, window)?;
        Ok(ImageStat {
            stem: pair.stem.clone(),
            relevant_pixels: out.mask.count_relevant(),
            total_pixels: depth.values().len(),
            relevant_fraction: out.relevant_fraction,
            iterations: out.iterations,
            empty_ground_truth: out.empty_ground_truth,
        })
    });
    for img in images.iter().filter(|i| i.empty_ground_truth) {
        warnings.push(format!("{}: ground truth has no objects; initial window used", img.stem));
    }
    if images.is_empty() {
        return Err(Error::EmptyCorpus(format!("no valid depth/ground-truth pairs ({} warnings)", warnings.len())));
    }
    let mut histogram: Vec<HistogramBin> = (0..FRACTION_BINS)
        .map(|i| HistogramBin { lo: i as f64 / 10.0, hi: (i + 1) as f64 / 10.0, count: 0 })
        .collect();
    for img in &images {
        histogram[fraction_bin(img.relevant_pixels, img.total_pixels)].count += 1;
    }
    let mean_irrelevant = images
        .iter()
        .map(|i| (i.total_pixels - i.relevant_pixels) as f64 / i.total_pixels as f64)
        .sum::<f64>()
        / images.len() as f64;
    Ok(CorpusStats { window: *window, image_count: images.len(), images, histogram, mean_irrelevant, warnings })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

pub fn depth_level(depth: f64) -> usize {
    ((depth * DEPTH_LEVELS as f64 + 1e-9).floor() as usize).min(DEPTH_LEVELS - 1)
}

/// Bins every ground-truth object by the median depth of its pixels.
pub fn depth_level_distribution(depth_dir: impl AsRef<Path>, gt_dir: impl AsRef<Path>) -> Result<DepthLevelStats> {
    let mut warnings = Vec::new();
    let pairs = pair_files(depth_dir.as_ref(), gt_dir.as_ref(), &mut warnings)?;
    let per_image = process(&pairs, &mut warnings, |pair| {
        let depth = depth_read(&pair.depth)?;
        let gt = GroundTruth::read(&pair.gt)?;
        if depth.dims() != (gt.height, gt.width) {
            return Err(Error::Shape(format!(
                "depth map {:?} vs ground truth {}x{}",
                depth.dims(),
                gt.height,
                gt.width
            )));
        }
        Ok((0..gt.objects.len())
            .map(|i| {
                let mut d: Vec<f64> = gt.object_pixels(i).into_iter().map(|p| depth.values()[p]).collect();
                depth_level(median(&mut d))
            })
            .collect::<Vec<_>>())
    });
    if per_image.is_empty() {
        return Err(Error::EmptyCorpus(format!("no valid depth/ground-truth pairs ({} warnings)", warnings.len())));
    }
    let mut counts = [0usize; DEPTH_LEVELS];
    for level in per_image.iter().flatten() {
        counts[*level] += 1;
    }
    let object_count: usize = counts.iter().sum();
    let levels = counts
        .iter()
        .enumerate()
        .map(|(i, &n)| DepthLevelBin {
            lo: i as f64 / DEPTH_LEVELS as f64,
            hi: (i + 1) as f64 / DEPTH_LEVELS as f64,
            objects: n,
            fraction: if object_count == 0 { 0.0 } else { n as f64 / object_count as f64 },
        })
        .collect();
    Ok(DepthLevelStats { image_count: per_image.len(), object_count, levels, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fraction_bins_use_integer_arithmetic() {
        assert_eq!(fraction_bin(55, 100), 5);
        assert_eq!(fraction_bin(60, 100), 6);
        assert_eq!(fraction_bin(100, 100), 9);
        assert_eq!(fraction_bin(0, 100), 0);
        assert_eq!(fraction_bin(3, 10), 3);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn depth_levels() {
        assert_eq!(depth_level(0.1), 0);
        assert_eq!(depth_level(0.5), 2);
        assert_eq!(depth_level(0.2), 1);
        assert_eq!(depth_level(13107.0 / 65535.0), 1);
        assert_eq!(depth_level(1.0), 4);
    }
}
