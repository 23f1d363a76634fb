//! `focusconv` command-line tool.
//!
//! Every subcommand prints a one-object JSON summary on stdout and writes
//! diagnostics to stderr. Exit codes: 0 success, 2 validation or usage,
//! 3 unreadable or malformed input, 4 focused/standard mismatch.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use focusconv::bench::{bench_conv, report_emit, BenchConfig, BenchResult, ReportFormat, Workload};
use focusconv::model::{compare, model_load, run_focused, run_standard};
use focusconv::pgm::{depth_read, mask_read, mask_write};
use focusconv::relevance::{mask_from_gt_depth_levels, mask_from_threshold, GroundTruth, ThresholdWindow};
use focusconv::stats::{corpus_scan, depth_level_distribution};
use focusconv::{conv_focused, conv_standard, tensor_read, tensor_write, Error, PatchRule, PixelMask, Weights};
use serde_json::{json, Value};

const THREADS_VAR: &str = "FOCUSCONV_THREADS";

/// Keys that hold measured times; dropped from report files unless
/// `--timing` is given so reruns produce identical bytes.
const TIMING_KEYS: [&str; 4] = ["wall_time", "wall_time_standard", "wall_time_focused", "time_reduction"];

#[derive(Parser)]
#[command(name = "focusconv", version, about = "Focused convolutions: skip work outside a relevance mask")]
#[command(after_help = "Environment: FOCUSCONV_THREADS caps worker threads (0 = one per core).")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MaskMode {
    Threshold,
    GtLevels,
}

#[derive(Clone, Copy, ValueEnum)]
enum StatsMode {
    Fractions,
    DepthLevels,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Build a relevance mask from a depth map and ground-truth objects.
    Maskgen {
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "threshold")]
        mode: MaskMode,
        #[arg(long, default_value_t = 0.30)]
        init_lo: f64,
        #[arg(long, default_value_t = 0.70)]
        init_hi: f64,
        #[arg(long, default_value_t = 0.05)]
        step: f64,
        /// Depth bin width for gt-levels mode.
        #[arg(long, default_value_t = 0.2)]
        bin: f64,
    },
    /// Run one convolution layer, focused when a mask is given.
    Conv {
        #[arg(long)]
        input: PathBuf,
        /// FTNS tensor shaped (out_channels, in_channels, k, k).
        #[arg(long)]
        weights: PathBuf,
        /// FTNS tensor holding one value per output channel.
        #[arg(long)]
        bias: Option<PathBuf>,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        kernel: usize,
        #[arg(long, default_value_t = 1)]
        stride: usize,
        #[arg(long, default_value_t = 0)]
        padding: usize,
        #[arg(long, default_value = "any")]
        rule: PatchRule,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Keep wall-clock fields in the report file.
        #[arg(long)]
        timing: bool,
    },
    /// Run a model file, focused when a mask is given.
    Run {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, default_value = "any")]
        rule: PatchRule,
        /// Run both modes and check the exactly-computed positions agree.
        #[arg(long)]
        compare: bool,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Where to write the final output tensor.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        timing: bool,
    },
    /// Relevant-fraction histogram or object depth-level distribution of a corpus.
    Stats {
        #[arg(long)]
        depth_dir: PathBuf,
        #[arg(long)]
        gt_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "fractions")]
        mode: StatsMode,
        #[arg(long, default_value_t = 0.30)]
        init_lo: f64,
        #[arg(long, default_value_t = 0.70)]
        init_hi: f64,
        #[arg(long, default_value_t = 0.05)]
        step: f64,
    },
    /// Time standard against focused runs over `<stem>.ftns` / `<stem>.pgm` pairs.
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        inputs: PathBuf,
        #[arg(long)]
        masks: PathBuf,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value = "any")]
        rule: PatchRule,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
}

enum Failure {
    Lib(Error),
    Oracle(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type CliResult = Result<Value, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = init_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    match dispatch(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io_class() { 3 } else { 2 })
        }
        Err(Failure::Oracle(msg)) => {
            eprintln!("oracle violation: {msg}");
            ExitCode::from(4)
        }
    }
}

fn init_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var(THREADS_VAR) else { return Ok(()) };
    let n: usize = raw.trim().parse().map_err(|_| format!("{THREADS_VAR} must be a non-negative integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn dispatch(command: Command) -> CliResult {
    match command {
        Command::Maskgen { depth, gt, out, mode, init_lo, init_hi, step, bin } => {
            cmd_maskgen(&depth, &gt, &out, mode, ThresholdWindow::new(init_lo, init_hi, step)?, bin)
        }
        Command::Conv { input, weights, bias, mask, kernel, stride, padding, rule, out, report, timing } => cmd_conv(
            ConvArgs { input, weights, bias, mask, kernel, stride, padding, rule, out, report, timing },
        ),
        Command::Run { model, input, mask, rule, compare, report, out, timing } => {
            cmd_run(RunArgs { model, input, mask, rule, compare, report, out, timing })
        }
        Command::Stats { depth_dir, gt_dir, out, mode, init_lo, init_hi, step } => {
            cmd_stats(&depth_dir, &gt_dir, &out, mode, ThresholdWindow::new(init_lo, init_hi, step)?)
        }
        Command::Bench { model, inputs, masks, reps, rule, out, format } => {
            cmd_bench(&model, &inputs, &masks, reps, rule, &out, format)
        }
    }
}

fn cmd_maskgen(depth: &Path, gt: &Path, out: &Path, mode: MaskMode, window: ThresholdWindow, bin: f64) -> CliResult {
    let depth = depth_read(depth)?;
    let gt = GroundTruth::read(gt)?;
    let summary = match mode {
        MaskMode::Threshold => {
            let outcome = mask_from_threshold(&depth, &gt, &window)?;
            mask_write(&outcome.mask, out)?;
            let mut v = serde_json::to_value(&outcome).map_err(Error::from)?;
            v["mode"] = json!("threshold");
            v["relevant_pixels"] = json!(outcome.mask.count_relevant());
            v
        }
        MaskMode::GtLevels => {
            if !(bin > 0.0 && bin <= 1.0) {
                return Err(Error::Validation(format!("--bin must lie in (0, 1], got {bin}")).into());
            }
            let mask = mask_from_gt_depth_levels(&depth, &gt, bin)?;
            mask_write(&mask, out)?;
            json!({
                "mode": "gt-levels",
                "bin_width": bin,
                "relevant_pixels": mask.count_relevant(),
                "relevant_fraction": mask.relevant_fraction(),
            })
        }
    };
    Ok(summary)
}

struct ConvArgs {
    input: PathBuf,
    weights: PathBuf,
    bias: Option<PathBuf>,
    mask: Option<PathBuf>,
    kernel: usize,
    stride: usize,
    padding: usize,
    rule: PatchRule,
    out: PathBuf,
    report: PathBuf,
    timing: bool,
}

fn cmd_conv(a: ConvArgs) -> CliResult {
    let input = tensor_read(&a.input)?;
    let tensor = tensor_read(&a.weights)?;
    let weights = match &a.bias {
        Some(p) => Weights::new(tensor, tensor_read(p)?.into_data())?,
        None => Weights::without_bias(tensor)?,
    };
    let spec = weights.spec(a.stride, a.padding)?;
    if spec.kernel_size != a.kernel {
        let k = spec.kernel_size;
        return Err(Error::Shape(format!("--kernel {} but weights hold {k}x{k} kernels", a.kernel)).into());
    }
    let (output, report, mode) = match &a.mask {
        Some(p) => {
            let mask = mask_read(p)?;
            let (output, _, report) = conv_focused(&input, &spec, &weights, &mask, a.rule)?;
            (output, report, "focused")
        }
        None => {
            let (output, report) = conv_standard(&input, &spec, &weights)?;
            (output, report, "standard")
        }
    };
    tensor_write(&output, &a.out)?;
    let mut summary = serde_json::to_value(report).map_err(Error::from)?;
    summary["mode"] = json!(mode);
    summary["rule"] = json!(a.rule);
    summary["output_shape"] = json!(output.shape().as_array());
    write_report(&summary, &a.report, a.timing)?;
    Ok(summary)
}

struct RunArgs {
    model: PathBuf,
    input: PathBuf,
    mask: Option<PathBuf>,
    rule: PatchRule,
    compare: bool,
    report: Option<PathBuf>,
    out: Option<PathBuf>,
    timing: bool,
}

fn cmd_run(a: RunArgs) -> CliResult {
    let model = model_load(&a.model)?;
    let input = tensor_read(&a.input)?;
    let mask = a.mask.as_ref().map(mask_read).transpose()?;
    let (summary, output, mismatch) = if a.compare {
        let s = model.input_shape();
        let mask = match mask {
            Some(m) => m,
            None => PixelMask::filled(s.height, s.width, true)?,
        };
        let cmp = compare(&model, &input, &mask, a.rule)?;
        let mismatch = (!cmp.output_equal).then(|| {
            format!(
                "{} values differ over {} exactly-computed positions ({} retained)",
                cmp.mismatches, cmp.exact_positions, cmp.retained_positions
            )
        });
        let output = match &a.out {
            Some(_) => Some(run_focused(&model, &input, &mask, a.rule)?.output),
            None => None,
        };
        (serde_json::to_value(&cmp).map_err(Error::from)?, output, mismatch)
    } else {
        let (output, report) = match &mask {
            Some(m) => {
                let run = run_focused(&model, &input, m, a.rule)?;
                (run.output, run.report)
            }
            None => run_standard(&model, &input)?,
        };
        (serde_json::to_value(&report).map_err(Error::from)?, Some(output), None)
    };
    if let (Some(path), Some(output)) = (&a.out, &output) {
        tensor_write(output, path)?;
    }
    if let Some(path) = &a.report {
        write_report(&summary, path, a.timing)?;
    }
    match mismatch {
        Some(msg) => Err(Failure::Oracle(msg)),
        None => Ok(summary),
    }
}

fn cmd_stats(depth_dir: &Path, gt_dir: &Path, out: &Path, mode: StatsMode, window: ThresholdWindow) -> CliResult {
    let (value, warnings) = match mode {
        StatsMode::Fractions => {
            let stats = corpus_scan(depth_dir, gt_dir, &window)?;
            (serde_json::to_value(&stats).map_err(Error::from)?, stats.warnings)
        }
        StatsMode::DepthLevels => {
            let stats = depth_level_distribution(depth_dir, gt_dir)?;
            (serde_json::to_value(&stats).map_err(Error::from)?, stats.warnings)
        }
    };
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    write_json(&value, out)?;
    let mut summary = json!({ "out": out, "warnings": warnings.len() });
    for key in ["image_count", "object_count", "mean_irrelevant"] {
        if let Some(v) = value.get(key) {
            summary[key] = v.clone();
        }
    }
    Ok(summary)
}

fn cmd_bench(
    model: &Path,
    inputs: &Path,
    masks: &Path,
    reps: usize,
    rule: PatchRule,
    out: &Path,
    format: Format,
) -> CliResult {
    for (flag, dir) in [("--inputs", inputs), ("--masks", masks)] {
        if !dir.is_dir() {
            return Err(Error::Validation(format!("{flag} {} is not a directory", dir.display())).into());
        }
    }
    // Validate reps before loading anything heavy.
    BenchConfig::new("", reps)?;
    let model = model_load(model)?;
    let mut stems: Vec<String> = fs::read_dir(inputs)
        .map_err(|e| Error::Io { path: inputs.to_path_buf(), source: e })?
        .filter_map(|entry| {
            let path = entry.ok()?.path();
            (path.extension()? == "ftns").then(|| path.file_stem()?.to_str().map(String::from))?
        })
        .collect();
    stems.sort();
    let mut results: Vec<BenchResult> = Vec::new();
    for stem in stems {
        let mask_path = masks.join(format!("{stem}.pgm"));
        if !mask_path.is_file() {
            eprintln!("warning: {stem}: no mask {}", mask_path.display());
            continue;
        }
        let input = tensor_read(inputs.join(format!("{stem}.ftns")))?;
        let mask = mask_read(&mask_path)?;
        let config = BenchConfig::new(stem, reps)?;
        let result = bench_conv(&config, &Workload::Model { model: &model, input: &input, mask: &mask, rule })?;
        if let Some(w) = &result.precision_warning {
            eprintln!("warning: {}: {w}", result.config);
        }
        results.push(result);
    }
    if results.is_empty() {
        return Err(Error::Validation(format!("no <stem>.ftns / <stem>.pgm pairs in {} and {}", inputs.display(), masks.display())).into());
    }
    let format = match format {
        Format::Csv => ReportFormat::Csv,
        Format::Json => ReportFormat::Json,
    };
    report_emit(&results, out, format)?;
    let rows: Vec<Value> = results
        .iter()
        .map(|r| {
            json!({
                "config": r.config,
                "ops_reduction": r.ops_reduction,
                "t_standard_median_s": r.t_standard_median,
                "t_focused_median_s": r.t_focused_median,
                "t_reduction": r.t_reduction,
            })
        })
        .collect();
    Ok(json!({ "out": out, "configs": rows }))
}

fn strip_timing(value: &mut Value) {
    match value {
        Value::Object(map) => {
            for key in TIMING_KEYS {
                map.remove(key);
            }
            map.values_mut().for_each(strip_timing);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

fn write_report(summary: &Value, path: &Path, timing: bool) -> Result<(), Error> {
    let mut value = summary.clone();
    if !timing {
        strip_timing(&mut value);
    }
    write_json(&value, path)
}

fn write_json(value: &Value, path: &Path) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strips_nested_timing_fields() {
        let mut v = json!({
            "wall_time": 1.5,
            "multiply_adds": 9,
            "standard": {"wall_time": 2.0, "layers": [{"ops": {"wall_time": 0.1, "columns_kept": 3}}]},
            "time_reduction": 0.4,
        });
        strip_timing(&mut v);
        assert_eq!(v, json!({"multiply_adds": 9, "standard": {"layers": [{"ops": {"columns_kept": 3}}]}}));
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
