//! Two-stage Bayesian model averaging (2SBMA) for instrumental-variable
//! regression.
//!
//! The first stage averages over instrument/covariate subsets for every
//! endogenous regressor; the second stage averages over covariate subsets
//! conditional on each retained first-stage combination. Posterior model
//! probabilities come from the BIC approximation, and identification is
//! checked with model-averaged Sargan and Cragg-Donald p-values.

pub mod cli_io;
pub mod diagnostics;
pub mod engine;
pub mod error;
pub mod model_space;
pub mod numerics;
pub mod simulation;

pub use error::{Error, Result};

#[cfg(test)]
pub(crate) mod test_support;
