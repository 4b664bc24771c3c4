//! Subspace factor analysis for multi-study data.
//!
//! Each study `s` is modeled as `N(0, Λ(I + A_sA_sᵀ)Λᵀ + Δ)`: a shared loading
//! matrix `Λ` carries the common covariance, and `ΛA_s` adds study-specific
//! variation inside the column space of `Λ`. Inference runs an HMC-within-Gibbs
//! sampler on the marginal likelihood, which touches the data only through
//! `W_s = Y_sᵀY_s`, so an iteration costs the same whatever the sample size.

pub mod cli;
pub mod datagen;
pub mod error;
pub mod hmc;
pub mod identifiability;
pub mod io;
pub mod likelihood;
pub mod model;
pub mod postprocess;
pub mod pipeline;
pub mod priors;

pub use error::{Result, SufaError};
pub use model::{ModelDims, ParamSet, StudySummary};
