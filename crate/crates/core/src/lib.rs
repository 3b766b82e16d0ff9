//! Tabular MLP and mixture-of-experts models with softmax or Gumbel-softmax
//! gating, plus the preprocessing, training, tuning and ranking protocol used
//! to benchmark them.

pub mod data;
pub mod error;
pub mod eval;
pub mod fsutil;
pub mod json;
pub mod model;
pub mod numerics;
pub mod pipeline;
pub mod preprocess;
pub mod train;
pub mod tune;

pub use error::{Error, Result};
