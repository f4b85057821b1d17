// Negated comparisons (`!(x > 0.0)`) deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod align;
pub mod codeswitch;
pub mod config;
pub mod corpus;
pub mod data;
pub mod error;
pub mod eval;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod prealign;
pub mod pretrain;
pub mod rng;
pub mod tokenizer;

pub use error::{Error, Result};
