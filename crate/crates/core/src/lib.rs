//! Focused convolution: GEMM convolution whose im2col stage skips patches
//! marked irrelevant by a per-pixel mask, plus the tooling around it.
//!
//! - [`tensor`]: NCHW `f32` tensors and the FTNS file format.
//! - [`conv`]: im2col, masked im2col, GEMM, direct reference convolution,
//!   and exact multiply-add accounting.
//! - [`mask`], [`relevance`], [`pgm`]: relevance masks from depth maps and
//!   ground truth, propagation through layers, PGM I/O.
//! - [`model`]: small conv/ReLU/max-pool networks run standard or focused.
//! - [`stats`], [`bench`]: corpus statistics and the latency/op-count harness.
//! - [`synth`]: synthetic depth maps, masks, and tensors for tests and demos.

pub mod bench;
pub mod conv;
pub mod error;
pub mod mask;
pub mod model;
pub mod pgm;
pub mod relevance;
pub mod stats;
pub mod synth;
pub mod tensor;

pub use conv::{
    conv_focused, conv_standard, direct_conv, estimate_ops_coarse, estimate_reduction, exact_ops, gemm_multiply,
    im2col, im2col_masked, ConvSpec, OpReport, PatchMatrix, PatchRule, Weights, Window, FILL_VALUE,
};
pub use error::{Error, Result};
pub use mask::{DepthMap, PixelMask};
pub use tensor::{tensor_read, tensor_write, Shape4, Tensor};
