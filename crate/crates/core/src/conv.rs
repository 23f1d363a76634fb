//! GEMM convolution via im2col, the focused (masked im2col) variant, a
//! direct sliding-window reference, and multiply-add accounting.
//!
//! Patch matrices are stored column-major: each retained output position
//! owns one contiguous column of `kernel_size^2 * in_channels` values,
//! ordered channel-major, then kernel row, then kernel column. That is the
//! same order as a row of the `(out, in, k, k)` weight tensor, so each
//! output value is a single contiguous dot product.

use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::PixelMask;
use crate::tensor::{Shape4, Tensor};

/// Value written at output positions whose patch was skipped.
pub const FILL_VALUE: f32 = 0.0;

/// Decides whether a patch counts as relevant from the mask values under
/// its receptive field. The mask extends into the padding by edge
/// replication, so a window lying wholly in the padding takes the
/// relevance of the nearest image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatchRule {
    /// At least one pixel of the window is relevant.
    #[default]
    Any,
    /// Every pixel of the window is relevant.
    All,
    /// The pixel at offset `(k/2, k/2)` inside the window is relevant.
    Center,
}

impl FromStr for PatchRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "any" => Ok(PatchRule::Any),
            "all" => Ok(PatchRule::All),
            "center" => Ok(PatchRule::Center),
            other => Err(Error::Validation(format!("unknown patch rule {other:?}"))),
        }
    }
}

impl std::fmt::Display for PatchRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PatchRule::Any => "any",
            PatchRule::All => "all",
            PatchRule::Center => "center",
        })
    }
}

/// Square sliding-window geometry shared by convolution and pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Window {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Window {
    pub fn output_dims(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        if self.kernel == 0 || self.stride == 0 {
            return Err(Error::Geometry(format!(
                "kernel ({}) and stride ({}) must be >= 1",
                self.kernel, self.stride
            )));
        }
        let padded_h = height + 2 * self.padding;
        let padded_w = width + 2 * self.padding;
        if self.kernel > padded_h || self.kernel > padded_w {
            return Err(Error::Geometry(format!(
                "kernel {} larger than padded input {padded_h}x{padded_w}",
                self.kernel
            )));
        }
        Ok(((padded_h - self.kernel) / self.stride + 1, (padded_w - self.kernel) / self.stride + 1))
    }

    /// First input coordinate covered by output coordinate `o`; may be negative in the padding.
    #[inline]
    fn origin(&self, o: usize) -> isize {
        (o * self.stride) as isize - self.padding as isize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvSpec {
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvSpec {
    pub fn new(
        kernel_size: usize,
        stride: usize,
        padding: usize,
        in_channels: usize,
        out_channels: usize,
    ) -> Result<Self> {
        if kernel_size == 0 || stride == 0 {
            return Err(Error::Validation("kernel_size and stride must be >= 1".into()));
        }
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::Validation("channel counts must be >= 1".into()));
        }
        Ok(ConvSpec { kernel_size, stride, padding, in_channels, out_channels })
    }

    pub fn window(&self) -> Window {
        Window { kernel: self.kernel_size, stride: self.stride, padding: self.padding }
    }

    pub fn output_dims(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        self.window().output_dims(height, width)
    }

    /// Rows of the patch matrix: `kernel_size^2 * in_channels`.
    pub fn patch_len(&self) -> usize {
        self.kernel_size * self.kernel_size * self.in_channels
    }

    /// Multiply-adds spent per retained column.
    pub fn ops_per_column(&self) -> u64 {
        (self.patch_len() * self.out_channels) as u64
    }

    pub fn output_shape(&self, input: Shape4) -> Result<Shape4> {
        self.check_input(input)?;
        let (out_h, out_w) = self.output_dims(input.height, input.width)?;
        Shape4::new(input.batch, self.out_channels, out_h, out_w)
    }

    fn check_input(&self, input: Shape4) -> Result<()> {
        if input.channels != self.in_channels {
            return Err(Error::Shape(format!(
                "input has {} channels, conv expects {}",
                input.channels, self.in_channels
            )));
        }
        Ok(())
    }
}

/// Convolution weights of shape `(out_channels, in_channels, k, k)` plus one bias per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub tensor: Tensor,
    pub bias: Vec<f32>,
}

impl Weights {
    pub fn new(tensor: Tensor, bias: Vec<f32>) -> Result<Self> {
        let s = tensor.shape();
        if s.height != s.width {
            return Err(Error::Shape(format!("weight kernel must be square, got {s}")));
        }
        if bias.len() != s.batch {
            return Err(Error::Shape(format!(
                "bias has {} values, weights have {} output channels",
                bias.len(),
                s.batch
            )));
        }
        Ok(Weights { tensor, bias })
    }

    pub fn without_bias(tensor: Tensor) -> Result<Self> {
        let n = tensor.shape().batch;
        Self::new(tensor, vec![0.0; n])
    }

    pub fn zeros(spec: &ConvSpec) -> Result<Self> {
        let shape = Shape4::new(spec.out_channels, spec.in_channels, spec.kernel_size, spec.kernel_size)?;
        Self::without_bias(Tensor::zeros(shape)?)
    }

    pub fn check(&self, spec: &ConvSpec) -> Result<()> {
        let s = self.tensor.shape();
        let want = [spec.out_channels, spec.in_channels, spec.kernel_size, spec.kernel_size];
        if s.as_array() != want {
            return Err(Error::Shape(format!("weights {s} do not match conv spec {want:?}")));
        }
        if self.bias.len() != spec.out_channels {
            return Err(Error::Shape(format!(
                "bias has {} values, expected {}",
                self.bias.len(),
                spec.out_channels
            )));
        }
        Ok(())
    }

    /// The conv spec implied by these weights for a given stride and padding.
    pub fn spec(&self, stride: usize, padding: usize) -> Result<ConvSpec> {
        let s = self.tensor.shape();
        ConvSpec::new(s.height, stride, padding, s.channels, s.batch)
    }

    fn row(&self, out_channel: usize) -> &[f32] {
        let k = self.tensor.shape().channels * self.tensor.shape().plane();
        &self.tensor.data()[out_channel * k..(out_channel + 1) * k]
    }
}

/// im2col output restricted to a set of retained output positions.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMatrix {
    rows: usize,
    columns_total: usize,
    out_h: usize,
    out_w: usize,
    batch: usize,
    /// Flat `(b, oh, ow)` output index per retained column, strictly increasing.
    positions: Vec<usize>,
    /// Column-major values, `rows` per column.
    data: Vec<f32>,
}

impl PatchMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn num_columns(&self) -> usize {
        self.positions.len()
    }

    pub fn columns_total(&self) -> usize {
        self.columns_total
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn column(&self, j: usize) -> &[f32] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn output_dims(&self) -> (usize, usize) {
        (self.out_h, self.out_w)
    }

    /// Retained positions as an output-resolution mask (union over the batch).
    pub fn retained_mask(&self) -> Result<PixelMask> {
        let mut mask = PixelMask::filled(self.out_h, self.out_w, false)?;
        let plane = self.out_h * self.out_w;
        for &p in &self.positions {
            let r = p % plane;
            mask.set(r / self.out_w, r % self.out_w, true);
        }
        Ok(mask)
    }
}

/// Exact multiply-add accounting for one convolution call.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OpReport {
    pub columns_total: u64,
    pub columns_kept: u64,
    pub multiply_adds: u64,
    /// Seconds.
    pub wall_time: f64,
}

impl OpReport {
    pub fn columns_dropped(&self) -> u64 {
        self.columns_total - self.columns_kept
    }

    pub fn kept_fraction(&self) -> f64 {
        if self.columns_total == 0 {
            return 0.0;
        }
        self.columns_kept as f64 / self.columns_total as f64
    }
}

/// GEMM result: `out_channels` values per retained column, column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GemmOutput {
    pub out_channels: usize,
    pub values: Vec<f32>,
}

impl GemmOutput {
    pub fn column(&self, j: usize) -> &[f32] {
        &self.values[j * self.out_channels..(j + 1) * self.out_channels]
    }
}

/// Output-resolution mask of positions whose receptive field satisfies `rule`.
pub fn patch_relevance(mask: &PixelMask, window: Window, rule: PatchRule) -> Result<PixelMask> {
    let (in_h, in_w) = mask.dims();
    let (out_h, out_w) = window.output_dims(in_h, in_w)?;
    let table = mask.integral();
    let stride = in_w + 1;
    // Clamping a window to the image is the same as edge-replicating the mask.
    let clip = |origin: isize, limit: usize| -> (usize, usize) {
        let last = limit as isize - 1;
        let lo = origin.clamp(0, last) as usize;
        let hi = (origin + window.kernel as isize - 1).clamp(0, last) as usize + 1;
        (lo, hi)
    };
    let half = (window.kernel / 2) as isize;
    PixelMask::from_fn(out_h, out_w, |oh, ow| {
        let (oy, ox) = (window.origin(oh), window.origin(ow));
        match rule {
            PatchRule::Center => {
                let cy = (oy + half).clamp(0, in_h as isize - 1) as usize;
                let cx = (ox + half).clamp(0, in_w as isize - 1) as usize;
                mask.get(cy, cx)
            }
            PatchRule::Any | PatchRule::All => {
                let (y0, y1) = clip(oy, in_h);
                let (x0, x1) = clip(ox, in_w);
                let count = table[y1 * stride + x1] + table[y0 * stride + x0]
                    - table[y0 * stride + x1]
                    - table[y1 * stride + x0];
                match rule {
                    PatchRule::Any => count > 0,
                    _ => count as usize == (y1 - y0) * (x1 - x0),
                }
            }
        }
    })
}

fn extract_column(input: &Tensor, spec: &ConvSpec, b: usize, oh: usize, ow: usize, col: &mut [f32]) {
    let shape = input.shape();
    let window = spec.window();
    let (oy, ox) = (window.origin(oh), window.origin(ow));
    let k = spec.kernel_size;
    let mut idx = 0;
    for c in 0..spec.in_channels {
        let plane = input.plane(b, c);
        for ky in 0..k {
            let y = oy + ky as isize;
            if y < 0 || y as usize >= shape.height {
                col[idx..idx + k].fill(0.0);
                idx += k;
                continue;
            }
            let row = &plane[y as usize * shape.width..(y as usize + 1) * shape.width];
            for kx in 0..k {
                let x = ox + kx as isize;
                col[idx] = if x < 0 || x as usize >= shape.width { 0.0 } else { row[x as usize] };
                idx += 1;
            }
        }
    }
}

fn build_patches(input: &Tensor, spec: &ConvSpec, keep: Option<&PixelMask>) -> Result<PatchMatrix> {
    let shape = input.shape();
    spec.check_input(shape)?;
    let (out_h, out_w) = spec.output_dims(shape.height, shape.width)?;
    let rows = spec.patch_len();
    let plane = out_h * out_w;
    let positions: Vec<usize> = (0..shape.batch)
        .flat_map(|b| (0..plane).map(move |r| b * plane + r))
        .filter(|&p| keep.is_none_or(|m| m.as_slice()[p % plane]))
        .collect();
    let mut data = vec![0.0f32; positions.len() * rows];
    data.par_chunks_mut(rows.max(1))
        .zip(positions.par_iter())
        .with_min_len(64)
        .for_each(|(col, &p)| {
            let (b, r) = (p / plane, p % plane);
            extract_column(input, spec, b, r / out_w, r % out_w, col);
        });
    Ok(PatchMatrix { rows, columns_total: shape.batch * plane, out_h, out_w, batch: shape.batch, positions, data })
}

/// Full im2col: one column per output position.
pub fn im2col(input: &Tensor, spec: &ConvSpec) -> Result<PatchMatrix> {
    build_patches(input, spec, None)
}

/// im2col that skips every patch not relevant under `rule`.
pub fn im2col_masked(input: &Tensor, spec: &ConvSpec, mask: &PixelMask, rule: PatchRule) -> Result<PatchMatrix> {
    let shape = input.shape();
    if mask.dims() != (shape.height, shape.width) {
        return Err(Error::Shape(format!(
            "mask {}x{} does not match input spatial dims {}x{}",
            mask.height(),
            mask.width(),
            shape.height,
            shape.width
        )));
    }
    spec.check_input(shape)?;
    let keep = patch_relevance(mask, spec.window(), rule)?;
    build_patches(input, spec, Some(&keep))
}

/// Multiplies every retained column by the weight matrix.
///
/// Each dot product accumulates in a single f32 in ascending row order, so
/// a column's result depends only on that column and the weights.
pub fn gemm_multiply(weights: &Weights, patches: &PatchMatrix) -> Result<(GemmOutput, OpReport)> {
    let ws = weights.tensor.shape();
    let k = ws.channels * ws.plane();
    if k != patches.rows {
        return Err(Error::Shape(format!(
            "weight rows have length {k}, patch columns have {}",
            patches.rows
        )));
    }
    let out_channels = ws.batch;
    let start = Instant::now();
    let mut values = vec![0.0f32; patches.num_columns() * out_channels];
    values
        .par_chunks_mut(out_channels)
        .enumerate()
        .with_min_len(64)
        .for_each(|(j, out)| dot_column(weights, patches.column(j), out));
    let report = OpReport {
        columns_total: patches.columns_total as u64,
        columns_kept: patches.num_columns() as u64,
        multiply_adds: (patches.num_columns() * k * out_channels) as u64,
        wall_time: start.elapsed().as_secs_f64(),
    };
    Ok((GemmOutput { out_channels, values }, report))
}

fn dot_column(weights: &Weights, col: &[f32], out: &mut [f32]) {
    let n = out.len();
    let mut co = 0;
    // Four output channels per pass share the column loads; each accumulator
    // still sums in ascending k.
    while co + 4 <= n {
        let (w0, w1, w2, w3) = (weights.row(co), weights.row(co + 1), weights.row(co + 2), weights.row(co + 3));
        let (mut a0, mut a1, mut a2, mut a3) = (0.0f32, 0.0f32, 0.0f32, 0.0f32);
        for (i, &x) in col.iter().enumerate() {
            a0 += w0[i] * x;
            a1 += w1[i] * x;
            a2 += w2[i] * x;
            a3 += w3[i] * x;
        }
        out[co] = a0 + weights.bias[co];
        out[co + 1] = a1 + weights.bias[co + 1];
        out[co + 2] = a2 + weights.bias[co + 2];
        out[co + 3] = a3 + weights.bias[co + 3];
        co += 4;
    }
    for c in co..n {
        let mut acc = 0.0f32;
        for (&w, &x) in weights.row(c).iter().zip(col) {
            acc += w * x;
        }
        out[c] = acc + weights.bias[c];
    }
}

fn scatter(patches: &PatchMatrix, gemm: &GemmOutput, out_shape: Shape4) -> Result<Tensor> {
    let mut data = vec![FILL_VALUE; out_shape.numel()];
    let plane = patches.out_h * patches.out_w;
    for (j, &p) in patches.positions.iter().enumerate() {
        let (b, r) = (p / plane, p % plane);
        for (co, &v) in gemm.column(j).iter().enumerate() {
            data[(b * out_shape.channels + co) * plane + r] = v;
        }
    }
    Tensor::new(out_shape, data)
}

/// Standard GEMM convolution over every output position.
pub fn conv_standard(input: &Tensor, spec: &ConvSpec, weights: &Weights) -> Result<(Tensor, OpReport)> {
    weights.check(spec)?;
    let start = Instant::now();
    let out_shape = spec.output_shape(input.shape())?;
    let patches = im2col(input, spec)?;
    let (gemm, mut report) = gemm_multiply(weights, &patches)?;
    let output = scatter(&patches, &gemm, out_shape)?;
    report.wall_time = start.elapsed().as_secs_f64();
    Ok((output, report))
}

/// Focused convolution: only patches relevant under `rule` are converted
/// and multiplied. Skipped positions hold [`FILL_VALUE`] with no bias. The
/// returned mask marks retained output positions.
pub fn conv_focused(
    input: &Tensor,
    spec: &ConvSpec,
    weights: &Weights,
    mask: &PixelMask,
    rule: PatchRule,
) -> Result<(Tensor, PixelMask, OpReport)> {
    weights.check(spec)?;
    let start = Instant::now();
    let out_shape = spec.output_shape(input.shape())?;
    let patches = im2col_masked(input, spec, mask, rule)?;
    let (gemm, mut report) = gemm_multiply(weights, &patches)?;
    let output = scatter(&patches, &gemm, out_shape)?;
    report.wall_time = start.elapsed().as_secs_f64();
    Ok((output, patches.retained_mask()?, report))
}

/// Textbook sliding-window convolution with zero padding, accumulated in
/// f64. Used as an independent reference for the GEMM path.
pub fn direct_conv(input: &Tensor, spec: &ConvSpec, weights: &Weights) -> Result<Tensor> {
    weights.check(spec)?;
    let out_shape = spec.output_shape(input.shape())?;
    let s = input.shape();
    let (k, stride, pad) = (spec.kernel_size, spec.stride, spec.padding as isize);
    let w = weights.tensor.shape();
    Tensor::from_fn(out_shape, |b, co, oh, ow| {
        let mut acc = 0.0f64;
        for ci in 0..spec.in_channels {
            for ky in 0..k {
                for kx in 0..k {
                    let y = (oh * stride + ky) as isize - pad;
                    let x = (ow * stride + kx) as isize - pad;
                    if y < 0 || x < 0 || y as usize >= s.height || x as usize >= s.width {
                        continue;
                    }
                    let wv = weights.tensor.data()[w.index(co, ci, ky, kx)];
                    acc += wv as f64 * input.at(b, ci, y as usize, x as usize) as f64;
                }
            }
        }
        (acc + weights.bias[co] as f64) as f32
    })
}

/// Exact multiply-adds of a standard convolution: every output position
/// costs `k^2 * C_in * C_out`.
pub fn exact_ops(shape: Shape4, spec: &ConvSpec) -> Result<u64> {
    let out = spec.output_shape(shape)?;
    Ok((out.batch * out.plane()) as u64 * spec.ops_per_column())
}

/// Closed-form cost estimate `B * C(H-k)/s * (W-k)/s * k * k` for an
/// unpadded layer. It omits the `+1` of the exact output extent and the
/// output-channel factor, so it is an estimate, not an accounting.
pub fn estimate_ops_coarse(shape: Shape4, spec: &ConvSpec) -> Result<f64> {
    if spec.padding != 0 {
        return Err(Error::UnsupportedEstimate("the closed-form estimate assumes no padding".into()));
    }
    let k = spec.kernel_size;
    if k > shape.height || k > shape.width {
        return Err(Error::Geometry(format!("kernel {k} larger than input {}x{}", shape.height, shape.width)));
    }
    let s = spec.stride as f64;
    let rows = (shape.channels * (shape.height - k)) as f64 / s;
    let cols = (shape.width - k) as f64 / s;
    Ok(shape.batch as f64 * rows * cols * (k * k) as f64)
}

/// Fractional reduction in operations when a fraction `p_relevant` of patches is kept.
pub fn estimate_reduction(p_relevant: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p_relevant) {
        return Err(Error::Validation(format!("relevant fraction {p_relevant} outside [0,1]")));
    }
    Ok(1.0 - p_relevant)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(k: usize, s: usize, p: usize, ci: usize, co: usize) -> ConvSpec {
        ConvSpec::new(k, s, p, ci, co).unwrap()
    }

    fn ramp(shape: Shape4) -> Tensor {
        Tensor::from_fn(shape, |b, c, h, w| (b * 1000 + c * 100 + h * 10 + w) as f32).unwrap()
    }

    #[test]
    fn worked_geometry_gives_9_by_8() {
        let input = ramp(Shape4::new(1, 1, 4, 6).unwrap());
        let m = im2col(&input, &spec(3, 1, 0, 1, 1)).unwrap();
        assert_eq!((m.rows(), m.num_columns()), (9, 8));
        // Column 5 is output (1, 1): rows 1..4, cols 1..4.
        assert_eq!(m.column(5), &[11., 12., 13., 21., 22., 23., 31., 32., 33.]);
    }

    #[test]
    fn single_patch_is_whole_image() {
        let input = ramp(Shape4::new(1, 1, 3, 3).unwrap());
        let m = im2col(&input, &spec(3, 1, 0, 1, 1)).unwrap();
        assert_eq!(m.num_columns(), 1);
        assert_eq!(m.column(0), input.data());
    }

    #[test]
    fn padding_columns_contain_zeros() {
        let input = Tensor::from_fn(Shape4::new(1, 1, 2, 2).unwrap(), |_, _, _, _| 1.0).unwrap();
        let m = im2col(&input, &spec(3, 1, 1, 1, 1)).unwrap();
        assert_eq!(m.num_columns(), 4);
        assert_eq!(m.column(0), &[0., 0., 0., 0., 1., 1., 0., 1., 1.]);
    }

    #[test]
    fn channel_mismatch_and_oversized_kernel_rejected() {
        let input = ramp(Shape4::new(1, 2, 4, 4).unwrap());
        assert!(matches!(im2col(&input, &spec(3, 1, 0, 1, 1)), Err(Error::Shape(_))));
        assert!(matches!(im2col(&input, &spec(5, 1, 0, 2, 1)), Err(Error::Geometry(_))));
        assert!(im2col(&input, &spec(5, 1, 1, 2, 1)).is_ok());
    }

    #[test]
    fn mask_dimension_mismatch_rejected() {
        let input = ramp(Shape4::new(1, 1, 4, 6).unwrap());
        let mask = PixelMask::filled(4, 5, true).unwrap();
        assert!(matches!(
            im2col_masked(&input, &spec(3, 1, 0, 1, 1), &mask, PatchRule::Any),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn all_irrelevant_mask_gives_no_columns_and_zero_ops() {
        let input = ramp(Shape4::new(1, 1, 4, 6).unwrap());
        let sp = spec(3, 1, 0, 1, 2);
        let w = Weights::new(Tensor::from_fn(Shape4::new(2, 1, 3, 3).unwrap(), |_, _, _, _| 1.0).unwrap(), vec![5.0, 5.0]).unwrap();
        let mask = PixelMask::filled(4, 6, false).unwrap();
        let (out, retained, report) = conv_focused(&input, &sp, &w, &mask, PatchRule::Any).unwrap();
        assert_eq!(report.columns_kept, 0);
        assert_eq!(report.multiply_adds, 0);
        assert!(out.data().iter().all(|&v| v == FILL_VALUE));
        assert_eq!(retained.count_relevant(), 0);
    }

    #[test]
    fn ones_kernel_sums_to_nine() {
        let input = Tensor::from_fn(Shape4::new(1, 1, 3, 3).unwrap(), |_, _, _, _| 1.0).unwrap();
        let sp = spec(3, 1, 0, 1, 1);
        let w = Weights::without_bias(Tensor::from_fn(Shape4::new(1, 1, 3, 3).unwrap(), |_, _, _, _| 1.0).unwrap()).unwrap();
        let (out, report) = conv_standard(&input, &sp, &w).unwrap();
        assert_eq!(out.data(), &[9.0]);
        assert_eq!(report.multiply_adds, 9);
        assert_eq!(direct_conv(&input, &sp, &w).unwrap().data(), &[9.0]);
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let input = ramp(Shape4::new(1, 1, 5, 5).unwrap());
        let sp = spec(1, 1, 0, 1, 1);
        let w = Weights::without_bias(Tensor::new(Shape4::new(1, 1, 1, 1).unwrap(), vec![1.0]).unwrap()).unwrap();
        let (out, _) = conv_standard(&input, &sp, &w).unwrap();
        assert_eq!(out.data(), input.data());
        assert_eq!(direct_conv(&input, &sp, &w).unwrap().data(), input.data());
    }

    #[test]
    fn weight_shape_checked_against_spec() {
        let input = ramp(Shape4::new(1, 1, 4, 4).unwrap());
        let w = Weights::zeros(&spec(3, 1, 0, 1, 2)).unwrap();
        assert!(matches!(conv_standard(&input, &spec(3, 1, 0, 1, 3), &w), Err(Error::Shape(_))));
        let sp = spec(3, 1, 0, 1, 1);
        let patches = im2col(&input, &spec(2, 1, 0, 1, 1)).unwrap();
        assert!(matches!(gemm_multiply(&Weights::zeros(&sp).unwrap(), &patches), Err(Error::Shape(_))));
    }

    #[test]
    fn center_rule_uses_window_center() {
        let mut mask = PixelMask::filled(5, 5, false).unwrap();
        mask.set(2, 2, true);
        let w = Window { kernel: 3, stride: 1, padding: 0 };
        let out = patch_relevance(&mask, w, PatchRule::Center).unwrap();
        assert_eq!(out.dims(), (3, 3));
        assert_eq!(out.count_relevant(), 1);
        assert!(out.get(1, 1));
    }

    #[test]
    fn padding_replicates_edge_relevance() {
        let mask = PixelMask::filled(3, 3, true).unwrap();
        let w = Window { kernel: 3, stride: 1, padding: 1 };
        assert_eq!(patch_relevance(&mask, w, PatchRule::All).unwrap().count_relevant(), 9);
        // 1x1 windows in the padding ring copy the adjacent border pixel.
        let mut m = PixelMask::filled(2, 2, false).unwrap();
        m.set(0, 0, true);
        let w = Window { kernel: 1, stride: 1, padding: 1 };
        let out = patch_relevance(&m, w, PatchRule::Any).unwrap();
        assert_eq!(out, PixelMask::rect(4, 4, 0, 0, 2, 2).unwrap());
    }

    #[test]
    fn coarse_estimate_literal_values() {
        let sp = spec(3, 1, 0, 1, 1);
        let shape = Shape4::new(1, 1, 4, 6).unwrap();
        assert_eq!(estimate_ops_coarse(shape, &sp).unwrap(), 27.0);
        assert_eq!(exact_ops(shape, &sp).unwrap(), 72);
        let square = Shape4::new(1, 1, 3, 3).unwrap();
        assert_eq!(estimate_ops_coarse(square, &sp).unwrap(), 0.0);
        // W - k doubles from 3 to 6.
        let wider = Shape4::new(1, 1, 4, 9).unwrap();
        assert_eq!(estimate_ops_coarse(wider, &sp).unwrap(), 54.0);
        assert!(matches!(estimate_ops_coarse(shape, &spec(3, 1, 1, 1, 1)), Err(Error::UnsupportedEstimate(_))));
    }

    #[test]
    fn reduction_is_complement() {
        assert_eq!(estimate_reduction(0.52).unwrap(), 1.0 - 0.52);
        assert!((estimate_reduction(0.52).unwrap() - 0.48).abs() < 1e-15);
        assert_eq!(estimate_reduction(1.0).unwrap(), 0.0);
        assert_eq!(estimate_reduction(0.0).unwrap(), 1.0);
        assert!(estimate_reduction(1.2).is_err());
        assert!(estimate_reduction(-0.1).is_err());
        assert!(estimate_reduction(f64::NAN).is_err());
    }

    #[test]
    fn rule_parses() {
        assert_eq!("ANY".parse::<PatchRule>().unwrap(), PatchRule::Any);
        assert_eq!("center".parse::<PatchRule>().unwrap(), PatchRule::Center);
        assert!("most".parse::<PatchRule>().is_err());
    }
}
