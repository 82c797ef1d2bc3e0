//! Likelihood, derivative filters, Fisher information and KL divergence for
//! general hidden Markov models, with Monte Carlo estimators and model
//! selection.

pub mod error;
pub mod ghmm;
pub mod inference;
pub mod info;
pub mod models;
pub mod montecarlo;
pub mod multi_index;
pub mod sensitivity;

pub use error::{GhmmError, Result};
pub use ghmm::{log_likelihood, Ghmm, LogLikDerivs, SampledPath};
pub use montecarlo::{McRun, StreamKey};
pub use multi_index::MultiIndexSet;
