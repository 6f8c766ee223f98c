//! Coupled low-rank factorization of a cohort of PSD matrices with a kernel
//! ridge regression from the per-patient loadings onto scalar scores.
//!
//! Each input `Γ_n` is approximated as `X diag(c_n) Xᵀ` with a shared sparse
//! basis `X` and nonnegative loadings `c_n`; the loadings are simultaneously
//! asked to predict the score `y_n` through a kernel machine. Training
//! alternates a proximal-gradient step on `X`, a closed-form dual solve for
//! the regression, a bound-constrained trust-region step per loading vector
//! and augmented-Lagrangian updates of the constraint copies
//! `V_n = X diag(c_n)`.

pub mod cohort;
pub mod error;
pub mod evaluation;
pub mod factorization;
pub mod io;
pub mod kernel;
pub mod par;
pub mod prediction;
pub mod qp;
pub mod regression;
pub mod solver;
pub mod synth;
pub mod trust_region;
pub mod types;

pub use error::{CmoError, Result};
pub use types::{
    CohortDataset, CorrelationMatrix, Hyperparams, KernelSpec, KernelTerms, ModelState, TrustRegionConfig,
};

#[cfg(test)]
mod test_support;
