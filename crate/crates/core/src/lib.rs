//! Variable-grid low-bit weight quantization.
//!
//! A weight layer is encoded as `k` binary planes plus per-(row, group)
//! scalar coefficients, so every group gets its own reconstruction levels
//! instead of a scaled copy of one fixed template. Layers are solved under an
//! activation-induced metric with column-wise error compensation, coefficient
//! refits, and a triangular delta correction that keeps the propagation state
//! consistent across refits.
//!
//! Modules:
//! - [`tensor`]: dense matrices, the TNSR container, seeded synthetic layers
//! - [`linalg`]: Hessian construction, triangular factors and solves, the
//!   weighted least-squares coefficient fit
//! - [`grid`]: fixed templates, variable grids, difference-ratio feasibility
//! - [`bpd`]: 8-bit codes, plane extraction, MSB selection, group init
//! - [`solver`]: the group iteration loop and fixed-grid baselines
//! - [`kernel`]: packed artifact, BPQZ container, LUT matvec, storage math
//! - [`oracle`]: independent brute-force references used only by tests

pub mod bpd;
pub mod error;
pub mod grid;
pub mod kernel;
pub mod linalg;
pub mod oracle;
pub mod solver;
pub mod tensor;

pub use error::{Error, Result};
pub use kernel::{bits_per_weight, bits_per_weight_fixed, CoeffDtype, QuantizedLayer};
pub use linalg::HessianState;
pub use solver::{
    bpdq_quantize_layer, gptq_quantize_layer, objective, rtn_quantize_layer, BpdqLayerOutput,
    SolveReport,
};
pub use tensor::{load_tensor, save_tensor, synth_layer, RunConfig, Tensor2D};
