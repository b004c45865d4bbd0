//! Kernelized nonparametric estimation of binary choice models.
//!
//! The latent index is `V + g0(W)` with `g0` in a Gaussian RKHS and an unknown
//! error distribution drawn from a squared-Hermite family. `g0` is estimated
//! through a spectral truncation of the gram matrix; tuning parameters are
//! selected by cross-validation and marginal effects are reported with
//! bootstrap intervals.

pub mod data;
pub mod effects;
pub mod error;
pub mod estimator;
pub mod hermite;
pub mod inference;
pub mod kernel;
mod linalg;
pub mod optim;
pub mod rng;
pub mod selection;
pub mod simulation;

pub use data::{standardize, Dataset, Standardization};
pub use error::{KnpError, Result};
pub use estimator::{
    check_pc_bound, fit, fit_prepared, BoundReport, FitConfig, FitDiagnostics, KnpModel, ModelParts,
    OptimizerConfig, PcProblem, PreparedSample, WStarPolicy,
};
pub use hermite::HermiteDistribution;
pub use kernel::{build_gram, GramSystem, KernelSpec, Truncation};
