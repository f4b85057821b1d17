//! Decoder-only transformer, its autodiff engine, optimizer, sampling, and
//! checkpointing.

pub mod checkpoint;
pub mod generate;
pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod tensor;
pub mod transformer;

pub use checkpoint::ModelState;
pub use generate::{sample_generate, IncrementalDecoder, SampleOptions};
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Grads, Graph, ParamSet, Var};
pub use optim::{clip_grad_norm, AdamConfig, AdamState, CosineSchedule};
pub use tensor::{cosine, Float, Tensor};
pub use transformer::{log_softmax_rows, loss_lm, Forward, ModelConfig, Packed, Transformer};
