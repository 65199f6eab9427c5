//! Dataflow-graph scheduling for decoder-only LLM inference on CPU.
//!
//! A model is lowered to a static DAG of kernel nodes ([`graph`]), built by
//! [`model`] from a config and weights, and executed by one of the
//! schedulers in [`scheduler`]. [`runtime`] drives the prefill/decode loop
//! and [`profiler`] aggregates the per-node timings.

pub mod graph;
pub mod kernels;
pub mod model;
pub mod profiler;
pub mod runtime;
pub mod scheduler;
pub mod tensor;

pub use graph::{Backend, Graph, GraphError, NodeId, Op, OpKind, Tag, TagName};
pub use model::{ModelConfig, ModelError, Preset, WeightSet};
pub use profiler::{Phase, ProfileRecord, ProfileTrace};
pub use runtime::{Engine, EngineOptions, GenMetrics, Generation, RuntimeError};
pub use scheduler::{AccelModel, BackendPolicy, Executor, SchedulerError, SchedulerKind};
pub use tensor::{DType, Tensor, TensorError};
