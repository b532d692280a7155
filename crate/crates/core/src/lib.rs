//! Motion tokenization, synthetic cohorts, dataset building, baselines and
//! evaluation for biomechanics question answering.

pub mod baselines;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod motion;
pub mod seed;
pub mod synth;
pub mod tokenizer;

pub use error::{Error, Result};
