//! Concrete model families.

pub mod finite;
pub mod garch;
pub mod loglinear;
pub mod lssm;
pub mod product;
pub mod trbm;

pub use finite::{discrete_hmm, DiscreteHmmSpec, Emission, FiniteHmm, InitialLaw, MeanSource, Transition};
pub use garch::{garch11, garch_fisher_series, Garch11, Garch11Spec, InputMap, Sigma0};
pub use loglinear::{LogLinearTable, Outcome};
pub use lssm::{kalman_filter, lssm_fisher, varma_to_lssm, LssmModel, LssmSpec};
pub use product::{ProductModel, StreamPolicy};
pub use trbm::{trbm_to_hmm, TrbmSpec};
