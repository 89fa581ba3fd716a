//! Sparse weak-form identification of scalar Itô SDEs.
//!
//! Trajectories are projected onto spatial Gaussian kernels to build one
//! design matrix shared by a drift system (kernel-weighted increments) and a
//! diffusion system (kernel-weighted squared increments). Both are solved by
//! grouped cross-validated LASSO, OLS debiasing and sequential thresholding.
//! The [`diagnostics`] module checks identified generators against analytic
//! stationary densities, autocorrelations and noise-scaling laws.

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod features;
pub mod pipeline;
pub mod plot;
pub mod reproduce;
pub mod sde_sim;
pub mod sparse_regress;
pub mod weak_system;

pub use error::{Error, Result};
pub use features::{FeatureLibrary, KernelGrid};
pub use sde_sim::{Ensemble, SdeSpec, SimConfig};
pub use sparse_regress::{LassoConfig, SparseModel};
pub use weak_system::{Response, WeakSystem};

/// Shortest decimal representation that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}
