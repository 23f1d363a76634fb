//! Small sequential conv/ReLU/max-pool networks, run either with standard
//! convolutions or with focused convolutions and a propagated mask.
//!
//! Focused runs carry two masks between layers. The *retained* mask marks
//! positions that were computed. The *exact* mask marks positions whose
//! whole dependency cone was computed, so their values match a standard
//! run bit for bit. After one conv layer the two coincide. Deeper layers
//! read fill values at the border of the retained region, so the exact
//! mask shrinks relative to the retained one.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conv::{conv_focused, conv_standard, patch_relevance, ConvSpec, OpReport, PatchRule, Weights, Window, FILL_VALUE};
use crate::error::{Error, Result};
use crate::mask::PixelMask;
use crate::synth;
use crate::tensor::{tensor_read, Shape4, Tensor};

fn default_stride() -> usize {
    1
}

/// One layer as written in a model description file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        #[serde(default = "default_stride")]
        stride: usize,
        #[serde(default)]
        padding: usize,
        /// Optional; inferred from the previous layer when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        in_channels: Option<usize>,
        /// FTNS file of shape `(out, in, k, k)`, relative to the model file.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights: Option<PathBuf>,
        /// FTNS file holding `out_channels` values.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bias: Option<PathBuf>,
    },
    Relu,
    Maxpool {
        kernel: usize,
        #[serde(default = "default_stride")]
        stride: usize,
    },
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::Relu => "relu",
            LayerSpec::Maxpool { .. } => "maxpool",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    /// `[B, C, H, W]`.
    pub input: [usize; 4],
    pub layers: Vec<LayerSpec>,
    /// Seed for layers without weight files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ModelSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn input_shape(&self) -> Result<Shape4> {
        let [b, c, h, w] = self.input;
        Shape4::new(b, c, h, w).map_err(|e| Error::Validation(format!("model input: {e}")))
    }

    /// Walks the shape chain, returning every layer's output shape.
    pub fn shapes(&self) -> Result<Vec<Shape4>> {
        if self.layers.is_empty() {
            return Err(Error::Validation(format!("model {:?} has no layers", self.name)));
        }
        let mut shape = self.input_shape()?;
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let named = |e: Error| Error::Validation(format!("layer {i} ({}): {e}", layer.kind()));
            shape = match *layer {
                LayerSpec::Conv { in_channels: Some(c), .. } if c != shape.channels => {
                    return Err(named(Error::Shape(format!(
                        "in_channels {c} does not match incoming {} channels",
                        shape.channels
                    ))));
                }
                LayerSpec::Conv { out_channels, kernel, stride, padding, .. } => {
                    let spec = ConvSpec::new(kernel, stride, padding, shape.channels, out_channels).map_err(named)?;
                    spec.output_shape(shape).map_err(named)?
                }
                LayerSpec::Relu => shape,
                LayerSpec::Maxpool { kernel, stride } => {
                    let (h, w) = Window { kernel, stride, padding: 0 }
                        .output_dims(shape.height, shape.width)
                        .map_err(named)?;
                    Shape4::new(shape.batch, shape.channels, h, w).map_err(named)?
                }
            };
            shapes.push(shape);
        }
        Ok(shapes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv { spec: ConvSpec, weights: Weights },
    Relu,
    MaxPool { window: Window },
}

impl Layer {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv { .. } => "conv",
            Layer::Relu => "relu",
            Layer::MaxPool { .. } => "maxpool",
        }
    }
}

/// A validated network with weights. Immutable and shareable across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    name: String,
    input_shape: Shape4,
    layers: Vec<Layer>,
}

/// Uniform in `±1/sqrt(fan_in)`, seeded per layer.
pub fn seeded_weights(spec: &ConvSpec, seed: u64) -> Result<Weights> {
    let mut rng = synth::rng(seed);
    let bound = 1.0 / (spec.patch_len() as f32).sqrt();
    let shape = Shape4::new(spec.out_channels, spec.in_channels, spec.kernel_size, spec.kernel_size)?;
    let tensor = Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-bound..bound))?;
    let bias = (0..spec.out_channels).map(|_| rng.gen_range(-bound..bound)).collect();
    Weights::new(tensor, bias)
}

impl Model {
    /// Builds a model from explicit layers, validating the shape chain.
    pub fn new(name: impl Into<String>, input_shape: Shape4, layers: Vec<Layer>) -> Result<Self> {
        let name = name.into();
        if layers.is_empty() {
            return Err(Error::Validation(format!("model {name:?} has no layers")));
        }
        let mut shape = input_shape;
        for (i, layer) in layers.iter().enumerate() {
            shape = layer_output_shape(layer, shape)
                .map_err(|e| Error::Validation(format!("layer {i} ({}): {e}", layer.kind())))?;
        }
        Ok(Model { name, input_shape, layers })
    }

    /// Resolves a description into weights. Weight paths are relative to
    /// `base_dir`; conv layers without a weight file get seeded weights.
    pub fn from_spec(spec: &ModelSpec, base_dir: &Path) -> Result<Self> {
        let shapes = spec.shapes()?;
        let seed = spec.seed.unwrap_or(0);
        let mut incoming = spec.input_shape()?;
        let mut layers = Vec::with_capacity(spec.layers.len());
        for (i, (ls, &out)) in spec.layers.iter().zip(&shapes).enumerate() {
            let layer = match ls {
                LayerSpec::Conv { out_channels, kernel, stride, padding, weights, bias, .. } => {
                    let conv = ConvSpec::new(*kernel, *stride, *padding, incoming.channels, *out_channels)?;
                    let w = match weights {
                        Some(path) => {
                            let tensor = tensor_read(base_dir.join(path))?;
                            let bias = match bias {
                                Some(p) => tensor_read(base_dir.join(p))?.into_data(),
                                None => vec![0.0; *out_channels],
                            };
                            let w = Weights::new(tensor, bias)?;
                            w.check(&conv).map_err(|e| Error::Validation(format!("layer {i} (conv): {e}")))?;
                            w
                        }
                        None => seeded_weights(&conv, seed.wrapping_add(i as u64))?,
                    };
                    Layer::Conv { spec: conv, weights: w }
                }
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::Maxpool { kernel, stride } => {
                    Layer::MaxPool { window: Window { kernel: *kernel, stride: *stride, padding: 0 } }
                }
            };
            layers.push(layer);
            incoming = out;
        }
        Model::new(spec.name.clone(), spec.input_shape()?, layers)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn input_shape(&self) -> Shape4 {
        self.input_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.shape() != self.input_shape {
            return Err(Error::Shape(format!(
                "model {:?} expects input {}, got {}",
                self.name,
                self.input_shape,
                input.shape()
            )));
        }
        Ok(())
    }
}

fn layer_output_shape(layer: &Layer, input: Shape4) -> Result<Shape4> {
    match layer {
        Layer::Conv { spec, weights } => {
            weights.check(spec)?;
            spec.output_shape(input)
        }
        Layer::Relu => Ok(input),
        Layer::MaxPool { window } => {
            let (h, w) = window.output_dims(input.height, input.width)?;
            Shape4::new(input.batch, input.channels, h, w)
        }
    }
}

/// Reads a JSON model description; weight paths resolve relative to it.
pub fn model_load(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let spec = ModelSpec::from_json(&text)?;
    Model::from_spec(&spec, path.parent().unwrap_or(Path::new(".")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub index: usize,
    pub kind: String,
    pub output_shape: [usize; 4],
    /// Present for conv layers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ops: Option<OpReport>,
    /// Fraction of output positions retained (focused runs only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retained_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub model: String,
    pub mode: String,
    pub layers: Vec<LayerReport>,
    pub multiply_adds: u64,
    /// Seconds for the whole forward pass.
    pub wall_time: f64,
}

impl RunReport {
    fn new(model: &Model, mode: &str) -> Self {
        RunReport { model: model.name.clone(), mode: mode.into(), layers: Vec::new(), multiply_adds: 0, wall_time: 0.0 }
    }

    pub fn conv_reports(&self) -> impl Iterator<Item = &OpReport> {
        self.layers.iter().filter_map(|l| l.ops.as_ref())
    }
}

pub fn relu(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
    Tensor::new(input.shape(), data).expect("relu preserves shape")
}

/// Window max. With a mask, only contributors marked relevant take part and
/// windows without any write [`FILL_VALUE`].
pub fn max_pool(input: &Tensor, window: Window, mask: Option<&PixelMask>) -> Result<Tensor> {
    let s = input.shape();
    let (out_h, out_w) = window.output_dims(s.height, s.width)?;
    let out_shape = Shape4::new(s.batch, s.channels, out_h, out_w)?;
    Tensor::from_fn(out_shape, |b, c, oh, ow| {
        let plane = input.plane(b, c);
        let mut best: Option<f32> = None;
        for ky in 0..window.kernel {
            let y = oh * window.stride + ky;
            for kx in 0..window.kernel {
                let x = ow * window.stride + kx;
                if mask.is_some_and(|m| !m.get(y, x)) {
                    continue;
                }
                let v = plane[y * s.width + x];
                best = Some(best.map_or(v, |b| if v > b { v } else { b }));
            }
        }
        best.unwrap_or(FILL_VALUE)
    })
}

pub fn run_standard(model: &Model, input: &Tensor) -> Result<(Tensor, RunReport)> {
    model.check_input(input)?;
    let start = Instant::now();
    let mut report = RunReport::new(model, "standard");
    let mut x = input.clone();
    for (index, layer) in model.layers.iter().enumerate() {
        let mut ops = None;
        x = match layer {
            Layer::Conv { spec, weights } => {
                let (y, op) = conv_standard(&x, spec, weights)?;
                report.multiply_adds += op.multiply_adds;
                ops = Some(op);
                y
            }
            Layer::Relu => relu(&x),
            Layer::MaxPool { window } => max_pool(&x, *window, None)?,
        };
        report.layers.push(LayerReport {
            index,
            kind: layer.kind().into(),
            output_shape: x.shape().as_array(),
            ops,
            retained_fraction: None,
        });
    }
    report.wall_time = start.elapsed().as_secs_f64();
    Ok((x, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FocusedRun {
    pub output: Tensor,
    /// Final-layer positions that were computed.
    pub retained: PixelMask,
    /// Final-layer positions whose values equal a standard run bitwise.
    pub exact: PixelMask,
    pub report: RunReport,
}

/// Runs every conv layer as a focused convolution, propagating the mask
/// through conv (by `rule`), ReLU (unchanged), and max-pool (any computed
/// contributor) layers.
pub fn run_focused(model: &Model, input: &Tensor, mask: &PixelMask, rule: PatchRule) -> Result<FocusedRun> {
    model.check_input(input)?;
    let s = input.shape();
    if mask.dims() != (s.height, s.width) {
        return Err(Error::Shape(format!(
            "mask {}x{} does not match model input {}x{}",
            mask.height(),
            mask.width(),
            s.height,
            s.width
        )));
    }
    let start = Instant::now();
    let mut report = RunReport::new(model, "focused");
    let mut x = input.clone();
    let mut retained = mask.clone();
    // The raw input is fully available, so every input pixel is exact.
    let mut exact = PixelMask::filled(s.height, s.width, true)?;
    let mut input_stage = true;
    for (index, layer) in model.layers.iter().enumerate() {
        let mut ops = None;
        let (y, next_retained, next_exact) = match layer {
            Layer::Conv { spec, weights } => {
                let (y, out_mask, op) = conv_focused(&x, spec, weights, &retained, rule)?;
                report.multiply_adds += op.multiply_adds;
                ops = Some(op);
                let cone = patch_relevance(&exact, spec.window(), PatchRule::All)?;
                let exact = intersect(&out_mask, &cone);
                (y, out_mask, exact)
            }
            Layer::Relu => (relu(&x), retained.clone(), exact.clone()),
            Layer::MaxPool { window } => {
                // Before any conv, the input itself is complete; pool it as-is.
                let contributors = if input_stage { None } else { Some(&retained) };
                let y = max_pool(&x, *window, contributors)?;
                let out_mask = patch_relevance(&retained, *window, PatchRule::Any)?;
                let cone = patch_relevance(&exact, *window, PatchRule::All)?;
                let exact = intersect(&out_mask, &cone);
                (y, out_mask, exact)
            }
        };
        if matches!(layer, Layer::Conv { .. }) {
            input_stage = false;
        }
        x = y;
        retained = next_retained;
        exact = next_exact;
        report.layers.push(LayerReport {
            index,
            kind: layer.kind().into(),
            output_shape: x.shape().as_array(),
            ops,
            retained_fraction: Some(retained.relevant_fraction()),
        });
    }
    report.wall_time = start.elapsed().as_secs_f64();
    Ok(FocusedRun { output: x, retained, exact, report })
}

fn intersect(a: &PixelMask, b: &PixelMask) -> PixelMask {
    let v = a.as_slice().iter().zip(b.as_slice()).map(|(&x, &y)| x && y).collect();
    PixelMask::from_vec(a.height(), a.width(), v).expect("same dims")
}

/// Counts positions (over batch and channels) under `mask` where the two
/// tensors differ bitwise.
pub fn masked_mismatches(a: &Tensor, b: &Tensor, mask: &PixelMask) -> Result<usize> {
    let s = a.shape();
    if s != b.shape() || mask.dims() != (s.height, s.width) {
        return Err(Error::Shape(format!("cannot compare {} and {} under a {:?} mask", s, b.shape(), mask.dims())));
    }
    let plane = s.plane();
    Ok(a.data()
        .iter()
        .zip(b.data())
        .enumerate()
        .filter(|&(i, (x, y))| mask.as_slice()[i % plane] && x.to_bits() != y.to_bits())
        .count())
}

/// Standard and focused runs of the same input side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunComparison {
    pub model: String,
    pub rule: PatchRule,
    pub standard: RunReport,
    pub focused: RunReport,
    pub multiply_adds_standard: u64,
    pub multiply_adds_focused: u64,
    /// `1 - focused/standard` over multiply-adds.
    pub ops_reduction: f64,
    pub wall_time_standard: f64,
    pub wall_time_focused: f64,
    pub time_reduction: f64,
    pub retained_positions: usize,
    pub exact_positions: usize,
    /// Values at bitwise-differing (batch, channel, exact position) triples.
    pub mismatches: usize,
    pub output_equal: bool,
}

pub fn ops_reduction(standard: u64, focused: u64) -> f64 {
    if standard == 0 {
        return 0.0;
    }
    1.0 - focused as f64 / standard as f64
}

pub fn compare(model: &Model, input: &Tensor, mask: &PixelMask, rule: PatchRule) -> Result<RunComparison> {
    let (std_out, standard) = run_standard(model, input)?;
    let focused = run_focused(model, input, mask, rule)?;
    let mismatches = masked_mismatches(&std_out, &focused.output, &focused.exact)?;
    Ok(RunComparison {
        model: model.name.clone(),
        rule,
        multiply_adds_standard: standard.multiply_adds,
        multiply_adds_focused: focused.report.multiply_adds,
        ops_reduction: ops_reduction(standard.multiply_adds, focused.report.multiply_adds),
        wall_time_standard: standard.wall_time,
        wall_time_focused: focused.report.wall_time,
        time_reduction: if standard.wall_time > 0.0 { 1.0 - focused.report.wall_time / standard.wall_time } else { 0.0 },
        retained_positions: focused.retained.count_relevant(),
        exact_positions: focused.exact.count_relevant(),
        mismatches,
        output_equal: mismatches == 0,
        standard,
        focused: focused.report,
    })
}

/// Class per batch item: argmax over channels of the per-channel max over
/// positions in `region` (all positions when `None`). `None` when the
/// region is empty.
pub fn classify(output: &Tensor, region: Option<&PixelMask>) -> Vec<Option<usize>> {
    let s = output.shape();
    (0..s.batch)
        .map(|b| {
            let scores: Vec<Option<f32>> = (0..s.channels)
                .map(|c| {
                    output
                        .plane(b, c)
                        .iter()
                        .enumerate()
                        .filter(|&(i, _)| region.is_none_or(|m| m.as_slice()[i]))
                        .map(|(_, &v)| v)
                        .reduce(f32::max)
                })
                .collect();
            let mut best: Option<(usize, f32)> = None;
            for (c, score) in scores.into_iter().enumerate() {
                if let Some(v) = score {
                    if best.is_none_or(|(_, bv)| v > bv) {
                        best = Some((c, v));
                    }
                }
            }
            best.map(|(c, _)| c)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityCase {
    pub input: usize,
    pub batch_item: usize,
    pub standard_class: Option<usize>,
    pub focused_class: Option<usize>,
    pub agree: bool,
    /// Bitwise mismatches on the exact region (expected 0).
    pub exact_mismatches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub cases: Vec<IdentityCase>,
    pub mismatches: usize,
    pub agreement: f64,
}

impl IdentityReport {
    pub fn identical(&self) -> bool {
        self.mismatches == 0
    }
}

/// Checks that a focused network predicts the same class as the standard
/// one. The standard prediction pools the full output; the focused
/// prediction pools only the positions it computed.
pub fn accuracy_identity_check(
    model: &Model,
    inputs: &[Tensor],
    masks: &[PixelMask],
    rule: PatchRule,
) -> Result<IdentityReport> {
    if inputs.len() != masks.len() {
        return Err(Error::Shape(format!("{} inputs but {} masks", inputs.len(), masks.len())));
    }
    let mut cases = Vec::new();
    for (i, (input, mask)) in inputs.iter().zip(masks).enumerate() {
        let (std_out, _) = run_standard(model, input)?;
        let focused = run_focused(model, input, mask, rule)?;
        let exact_mismatches = masked_mismatches(&std_out, &focused.output, &focused.exact)?;
        let std_classes = classify(&std_out, None);
        let foc_classes = classify(&focused.output, Some(&focused.retained));
        for (b, (s, f)) in std_classes.into_iter().zip(foc_classes).enumerate() {
            cases.push(IdentityCase {
                input: i,
                batch_item: b,
                standard_class: s,
                focused_class: f,
                agree: s.is_some() && s == f,
                exact_mismatches,
            });
        }
    }
    let mismatches = cases.iter().filter(|c| !c.agree).count();
    let agreement = if cases.is_empty() { 1.0 } else { 1.0 - mismatches as f64 / cases.len() as f64 };
    Ok(IdentityReport { cases, mismatches, agreement })
}
