//! Likelihood maximization, chain-order embedding and model selection.

pub mod aic;
pub mod korder;
pub mod mle;
pub mod optimize;
pub mod reparam;

pub use aic::{aic_order_select, aic_state_select, penalty_delta, AicReport, AicRow, Selection};
pub use korder::{embed_korder, EmissionFamily, KorderEmbedding, KorderModel};
pub use mle::{lr_stat, mle_fit, mle_fit_multi, FitOptions, FitResult};
pub use optimize::FitStatus;
pub use reparam::{Block, Reparam};
