//! Projection-based correction for linear inverse problems.
//!
//! Given a forward model `y = A x + n` and the output `f(y)` of any
//! reconstruction function, this crate replaces the range-space part of
//! `f(y)` with `A⁺ y` (exact mode) or solves a noise-weighted proximal
//! problem (regularized mode), and provides the diagnostics needed to tell
//! whether a reconstructor already respects the range/null-space split.
//!
//! Module map:
//!
//! * [`linops`]: forward operators (dense, inpainting mask, circular blur,
//!   single-pixel random projections) with matrix-free apply/adjoint.
//! * [`pinv`]: pseudoinverse engines and the range/null-space projectors.
//! * [`correction`]: exact and regularized correction, lambda grid search.
//! * [`reconstructors`]: baseline, ridge-fitted and trainable affine
//!   reconstructors, plus file-backed external outputs.
//! * [`diagnostics`]: MSE/PSNR/SSIM and the consistency/noise diagnostics.
//! * [`harness`]: configuration, file formats and experiment drivers used by
//!   the `projcorr` binary.

// `!(x > 0.0)` is used on purpose so NaN parameters are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cg;
pub mod correction;
pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod linops;
pub mod pinv;
pub mod reconstructors;
pub mod rng;
mod vecops;

pub use correction::{
    correct, exact_correction, lambda_grid_search, regularized_correction, CorrectionConfig,
    CorrectionMode, GridObjective, GridSearchResult, NoiseModel, RegularizedSolver, SolverKind,
};
pub use diagnostics::{
    mse, noise_bias_trace, nullspace_consistency, psnr, range_residual, ssim, MetricsRecord,
    SsimParams,
};
pub use error::{Error, Result};
pub use linops::{Geometry, OperatorKind, SensingOperator};
pub use pinv::{PinvEngine, PinvMethod, PinvSettings};
pub use reconstructors::{Dataset, Reconstructor, Sample, WellTrained};
