//! Model configuration, synthetic weights, LLaMA graph construction and the
//! on-disk model format.

mod builder;
mod config;
mod file;
mod weights;

use thiserror::Error;

use crate::graph::GraphError;
use crate::kernels::KernelError;
use crate::tensor::TensorError;

pub use builder::{build_llama, LlamaGraph, LEAF_POSITIONS, LEAF_TOKENS};
pub use config::{ModelConfig, Preset};
pub use file::{load_model, read_model, save_model, write_model, FORMAT_VERSION, MAGIC};
pub use weights::{gen_synthetic_weights, LayerWeights, WeightSet};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("weight `{name}` has shape {got:?}, config requires {expected:?}")]
    WeightShape {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("expected {expected} layers of weights, got {got}")]
    LayerCount { expected: usize, got: usize },
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported model file version {0}")]
    Version(u32),
    #[error("truncated file while reading {0}")]
    Truncated(String),
    #[error("malformed model file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}
