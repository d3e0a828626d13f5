//! Weight-only post-training quantization with activation-guided structured
//! L∞ regularization.
//!
//! A layer `Y = XW` is first reconstructed column by column with proximal
//! gradient descent, trading a little output fidelity for smaller per-group
//! max-magnitudes where activations are large. The result is then quantized
//! group-wise with round-to-nearest or Hessian-compensated rounding, and
//! [`analysis`] reports the empirical error next to its analytic bound.

pub mod analysis;
pub mod container;
pub mod error;
pub mod gptq;
pub mod pipeline;
pub mod quant;
pub mod reg;
pub mod synth;
pub mod tensor;

pub use analysis::{error_bound, layer_report, objective_value, GroupStat, LayerReport};
pub use container::{Tensor, TensorContainer, TensorData};
pub use error::{Error, Result};
pub use gptq::{gptq_quantize, HessianState};
pub use pipeline::{run_layer, run_pipeline, Backend, Mode, PipelineConfig};
pub use quant::{dequantize, rtn_quantize, GroupScheme, QuantConfig, QuantizedLayer};
pub use reg::{
    compute_alpha, pgd_reconstruct_column, project_l1_ball, prox_linf, reconstruct_layer,
    AlphaVector, RegConfig, RegMode,
};
pub use synth::{gen_synthetic, SynthConfig};
pub use tensor::{frobenius_norm, gram, lambda_max, DenseMatrix, SpectralConfig, SpectralEstimate};
