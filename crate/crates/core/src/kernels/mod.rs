//! Reference kernels for every op kind.
//!
//! Kernels are pure functions over immutable inputs. Reductions run in f32
//! in a fixed order, so equal inputs always give bit-identical outputs no
//! matter which worker runs them or how a matmul's rows are split.

mod attention;
mod matmul;
mod ops;
pub(crate) mod pack;
pub mod quant;

use thiserror::Error;

use crate::tensor::TensorError;

pub use attention::{attn_scores, attn_values};
pub use matmul::{matmul, matmul_rows};
pub use ops::{
    elementwise, embed_lookup, rmsnorm, rmsnorm_columns, rope, scale, softmax_causal, Elementwise,
};
pub use quant::{dequantize_q4, dequantize_q8, dequantize_tensor, quantize_q4, quantize_q8, quantize_tensor};

pub(crate) use matmul::transpose;
pub use pack::ROW_GROUP;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("tensor `{name}` has rank {got}, expected {expected}")]
    Rank {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("quantization block needs exactly 32 values, got {0}")]
    BlockLength(usize),
    #[error("rope head dimension {0} is odd")]
    OddHeadDim(usize),
    #[error("causal softmax: {n_kv} key columns but n_past {n_past} + {n_q} queries")]
    CausalShape { n_q: usize, n_kv: usize, n_past: usize },
    #[error("token id {id} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },
}
