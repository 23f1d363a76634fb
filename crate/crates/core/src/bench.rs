//! Latency and multiply-add benchmark harness.
//!
//! Each configuration runs two untimed warm-up passes per mode, then `reps`
//! timed repetitions alternating standard and focused on one thread. Times
//! come from the monotonic clock; medians are reported.

use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::conv::{conv_focused, conv_standard, ConvSpec, PatchRule, Weights};
use crate::error::{Error, Result};
use crate::mask::PixelMask;
use crate::model::{ops_reduction, run_focused, run_standard, Model};
use crate::tensor::Tensor;

pub const MIN_REPS: usize = 3;
pub const DEFAULT_WARMUP: usize = 2;

pub const CSV_HEADER: [&str; 8] = [
    "config",
    "reps",
    "ops_standard",
    "ops_focused",
    "ops_reduction",
    "t_standard_median_s",
    "t_focused_median_s",
    "t_reduction",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchConfig {
    pub id: String,
    pub reps: usize,
    pub warmup: usize,
}

impl BenchConfig {
    pub fn new(id: impl Into<String>, reps: usize) -> Result<Self> {
        if reps < MIN_REPS {
            return Err(Error::Validation(format!("need at least {MIN_REPS} repetitions, got {reps}")));
        }
        Ok(BenchConfig { id: id.into(), reps, warmup: DEFAULT_WARMUP })
    }
}

/// What to time: one convolution layer, or a whole model.
pub enum Workload<'a> {
    Conv { input: &'a Tensor, spec: &'a ConvSpec, weights: &'a Weights, mask: &'a PixelMask, rule: PatchRule },
    Model { model: &'a Model, input: &'a Tensor, mask: &'a PixelMask, rule: PatchRule },
}

impl Workload<'_> {
    fn run_standard(&self) -> Result<u64> {
        Ok(match *self {
            Workload::Conv { input, spec, weights, .. } => conv_standard(input, spec, weights)?.1.multiply_adds,
            Workload::Model { model, input, .. } => run_standard(model, input)?.1.multiply_adds,
        })
    }

    fn run_focused(&self) -> Result<u64> {
        Ok(match *self {
            Workload::Conv { input, spec, weights, mask, rule } => {
                conv_focused(input, spec, weights, mask, rule)?.2.multiply_adds
            }
            Workload::Model { model, input, mask, rule } => run_focused(model, input, mask, rule)?.report.multiply_adds,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub config: String,
    pub reps: usize,
    pub times_standard: Vec<f64>,
    pub times_focused: Vec<f64>,
    pub ops_standard: u64,
    pub ops_focused: u64,
    pub ops_reduction: f64,
    pub t_standard_median: f64,
    pub t_focused_median: f64,
    /// `[min, max]` seconds.
    pub t_standard_range: [f64; 2],
    pub t_focused_range: [f64; 2],
    pub t_reduction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision_warning: Option<String>,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn range(values: &[f64]) -> [f64; 2] {
    values.iter().fold([f64::INFINITY, f64::NEG_INFINITY], |[lo, hi], &v| [lo.min(v), hi.max(v)])
}

/// Smallest observable tick of the monotonic clock.
pub fn timer_resolution() -> Duration {
    (0..16)
        .map(|_| {
            let start = Instant::now();
            loop {
                let d = start.elapsed();
                if !d.is_zero() {
                    break d;
                }
            }
        })
        .min()
        .unwrap()
}

fn timed(f: impl FnOnce() -> Result<u64>) -> Result<(u64, f64)> {
    let start = Instant::now();
    let ops = f()?;
    Ok((ops, start.elapsed().as_secs_f64()))
}

pub fn bench_conv(config: &BenchConfig, workload: &Workload<'_>) -> Result<BenchResult> {
    if config.reps < MIN_REPS {
        return Err(Error::Validation(format!("need at least {MIN_REPS} repetitions, got {}", config.reps)));
    }
    for _ in 0..config.warmup {
        workload.run_standard()?;
        workload.run_focused()?;
    }
    let (mut ops_standard, mut ops_focused) = (0, 0);
    let mut times_standard = Vec::with_capacity(config.reps);
    let mut times_focused = Vec::with_capacity(config.reps);
    for _ in 0..config.reps {
        let (ops, t) = timed(|| workload.run_standard())?;
        ops_standard = ops;
        times_standard.push(t);
        let (ops, t) = timed(|| workload.run_focused())?;
        ops_focused = ops;
        times_focused.push(t);
    }
    let t_standard_median = median(&times_standard);
    let t_focused_median = median(&times_focused);
    let resolution = timer_resolution().as_secs_f64();
    let fastest = t_standard_median.min(t_focused_median);
    let precision_warning = (resolution > 0.01 * fastest).then(|| {
        format!("timer resolution {resolution:.3e}s exceeds 1% of median runtime {fastest:.3e}s")
    });
    Ok(BenchResult {
        config: config.id.clone(),
        reps: config.reps,
        t_standard_range: range(&times_standard),
        t_focused_range: range(&times_focused),
        times_standard,
        times_focused,
        ops_standard,
        ops_focused,
        ops_reduction: ops_reduction(ops_standard, ops_focused),
        t_standard_median,
        t_focused_median,
        t_reduction: if t_standard_median > 0.0 { 1.0 - t_focused_median / t_standard_median } else { 0.0 },
        precision_warning,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Validation(format!("unknown report format {other:?}"))),
        }
    }
}

/// One CSV row, in header order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub config: String,
    pub reps: usize,
    pub ops_standard: u64,
    pub ops_focused: u64,
    pub ops_reduction: f64,
    pub t_standard_median_s: f64,
    pub t_focused_median_s: f64,
    pub t_reduction: f64,
}

impl From<&BenchResult> for CsvRow {
    fn from(r: &BenchResult) -> Self {
        CsvRow {
            config: r.config.clone(),
            reps: r.reps,
            ops_standard: r.ops_standard,
            ops_focused: r.ops_focused,
            ops_reduction: r.ops_reduction,
            t_standard_median_s: r.t_standard_median,
            t_focused_median_s: r.t_focused_median,
            t_reduction: r.t_reduction,
        }
    }
}

pub fn to_csv(results: &[BenchResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in results {
        w.serialize(CsvRow::from(r)).map_err(|e| Error::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn report_emit(results: &[BenchResult], path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    if results.is_empty() {
        return Err(Error::EmptyResults);
    }
    let path = path.as_ref();
    let text = match format {
        ReportFormat::Csv => to_csv(results)?,
        ReportFormat::Json => serde_json::to_string_pretty(results)?,
    };
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_csv_report(path: impl AsRef<Path>) -> Result<Vec<CsvRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    let header: Vec<String> = r.headers().map_err(|e| Error::Format(e.to_string()))?.iter().map(String::from).collect();
    if header != CSV_HEADER {
        return Err(Error::Format(format!("unexpected CSV header {header:?}")));
    }
    r.deserialize().map(|row| row.map_err(|e| Error::Format(e.to_string()))).collect()
}

pub fn read_json_report(path: impl AsRef<Path>) -> Result<Vec<BenchResult>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
