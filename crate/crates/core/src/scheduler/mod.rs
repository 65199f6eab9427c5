//! Executes a graph on a pool of workers.
//!
//! Four strategies share one dispatch loop and differ only in how each
//! level of the plan is turned into tasks:
//!
//! * `Sequential`: one node at a time, weight GEMMs split row-wise over all
//!   threads.
//! * `GraphParallel`: every wavefront level at once, one worker per node.
//! * `GraphTensorParallel`: as above, and weight GEMMs are additionally
//!   split over the workers left idle by a narrow level.
//! * `Hybrid`: as `GraphTensorParallel`, plus nodes labeled `Accel` are
//!   charged a modeled launch latency and cross-backend transfer time.
//!
//! Kernels are deterministic, so all four give bit-identical outputs.

mod backend;
mod exec;
mod pool;

use std::collections::HashMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::graph::{Backend, Graph, GraphError, Input, LeafId, NodeId, WavefrontSchedule};
use crate::kernels::{KernelError, ROW_GROUP};
use crate::profiler::{Phase, ProfileRecord, ProfileTrace};
use crate::tensor::{Tensor, TensorError};

pub use backend::{assign_backends, BackendPolicy};
use pool::{Done, Pool, Task};

/// Rows per tensor-parallel chunk are never fewer than this.
pub const MIN_SPLIT_ROWS: usize = 8;

#[derive(Debug, Error)]
pub enum SchedulerError {
    #[error("thread count must be at least 1")]
    ZeroThreads,
    #[error("hybrid scheduling needs an accelerator model")]
    MissingAccelModel,
    #[error("invalid accelerator model: {0}")]
    InvalidAccel(String),
    #[error("unknown backend policy `{0}`")]
    UnknownPolicy(String),
    #[error("unknown scheduler `{0}`")]
    UnknownScheduler(String),
    #[error("leaf `{0}` has no tensor bound")]
    UnboundLeaf(String),
    #[error("node {node} ({tag}): {source}")]
    Kernel {
        node: NodeId,
        tag: String,
        #[source]
        source: KernelError,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("worker pool shut down unexpectedly")]
    PoolClosed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SchedulerKind {
    Sequential,
    GraphParallel,
    GraphTensorParallel,
    Hybrid,
}

impl SchedulerKind {
    pub const ALL: [SchedulerKind; 4] = [
        SchedulerKind::Sequential,
        SchedulerKind::GraphParallel,
        SchedulerKind::GraphTensorParallel,
        SchedulerKind::Hybrid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchedulerKind::Sequential => "seq",
            SchedulerKind::GraphParallel => "graph",
            SchedulerKind::GraphTensorParallel => "graph-tensor",
            SchedulerKind::Hybrid => "hybrid",
        }
    }

    fn splits_matmuls(self) -> bool {
        self != SchedulerKind::GraphParallel
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchedulerKind {
    type Err = SchedulerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let kind = match s {
            "sequential" | "seq" | "v0" => SchedulerKind::Sequential,
            "graph-parallel" | "graph" | "v1" => SchedulerKind::GraphParallel,
            "graph-tensor-parallel" | "graph-tensor" | "v2" => SchedulerKind::GraphTensorParallel,
            "hybrid" | "v3" => SchedulerKind::Hybrid,
            _ => return Err(SchedulerError::UnknownScheduler(s.to_string())),
        };
        Ok(kind)
    }
}

/// Cost model for the emulated accelerator. Its kernels run on host
/// threads; the model only adds waiting time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccelModel {
    /// Fixed wait before each accelerator node.
    pub launch_latency: Duration,
    /// Bytes per second for tensors crossing backends.
    pub transfer_bandwidth: f64,
    /// With unified memory no transfer cost is charged.
    pub unified_memory: bool,
    /// Speed of accelerator kernels relative to the host. Values in (0, 1)
    /// stretch compute time; 0 or anything >= 1 leaves it unchanged.
    pub accel_speedup: f64,
}

impl Default for AccelModel {
    fn default() -> Self {
        AccelModel {
            launch_latency: Duration::from_micros(100),
            transfer_bandwidth: 10e9,
            unified_memory: false,
            accel_speedup: 1.0,
        }
    }
}

impl AccelModel {
    pub fn validate(&self) -> Result<(), SchedulerError> {
        if !(self.transfer_bandwidth > 0.0) {
            return Err(SchedulerError::InvalidAccel(format!(
                "transfer bandwidth {} must be positive",
                self.transfer_bandwidth
            )));
        }
        if !(self.accel_speedup >= 0.0) {
            return Err(SchedulerError::InvalidAccel(format!(
                "speedup {} must be non-negative",
                self.accel_speedup
            )));
        }
        Ok(())
    }

    pub fn transfer_time(&self, bytes: usize) -> Duration {
        if self.unified_memory || bytes == 0 {
            Duration::ZERO
        } else {
            Duration::from_secs_f64(bytes as f64 / self.transfer_bandwidth)
        }
    }

    fn compute_stretch(&self) -> f64 {
        if self.accel_speedup > 0.0 && self.accel_speedup < 1.0 {
            1.0 / self.accel_speedup
        } else {
            1.0
        }
    }
}

/// Tensors for the runtime leaves of one execution.
#[derive(Debug, Clone, Default)]
pub struct LeafBindings {
    bound: HashMap<LeafId, Arc<Tensor>>,
}

impl LeafBindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, leaf: LeafId, tensor: impl Into<Arc<Tensor>>) -> &mut Self {
        self.bound.insert(leaf, tensor.into());
        self
    }

    pub fn get(&self, leaf: LeafId) -> Option<&Arc<Tensor>> {
        self.bound.get(&leaf)
    }
}

#[derive(Debug)]
pub struct ExecutionReport {
    /// Tensors of the graph's output nodes.
    pub outputs: HashMap<NodeId, Arc<Tensor>>,
    /// One record per node.
    pub trace: ProfileTrace,
    pub wall: Duration,
}

impl ExecutionReport {
    pub fn output(&self, id: NodeId) -> Option<&Arc<Tensor>> {
        self.outputs.get(&id)
    }
}

/// A scheduler with its worker threads. Threads persist across `run` calls
/// and exit when the executor is dropped.
pub struct Executor {
    kind: SchedulerKind,
    n_threads: usize,
    accel: Option<AccelModel>,
    epoch: Instant,
    pool: Option<Pool>,
}

impl fmt::Debug for Executor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Executor")
            .field("kind", &self.kind)
            .field("n_threads", &self.n_threads)
            .field("accel", &self.accel)
            .finish()
    }
}

struct Pending {
    node: NodeId,
    chunks: usize,
    rows: usize,
}

impl Executor {
    pub fn new(kind: SchedulerKind, n_threads: usize, accel: Option<AccelModel>) -> Result<Self, SchedulerError> {
        if n_threads == 0 {
            return Err(SchedulerError::ZeroThreads);
        }
        if kind == SchedulerKind::Hybrid && accel.is_none() {
            return Err(SchedulerError::MissingAccelModel);
        }
        if let Some(a) = &accel {
            a.validate()?;
        }
        let epoch = Instant::now();
        let pool = (n_threads > 1).then(|| Pool::new(n_threads, epoch));
        Ok(Executor {
            kind,
            n_threads,
            accel,
            epoch,
            pool,
        })
    }

    pub fn kind(&self) -> SchedulerKind {
        self.kind
    }

    pub fn n_threads(&self) -> usize {
        self.n_threads
    }

    pub fn accel(&self) -> Option<&AccelModel> {
        self.accel.as_ref()
    }

    /// Executes every node of `graph` once. Records are stamped relative to
    /// the executor's creation.
    pub fn run(&self, graph: &Graph, bindings: &LeafBindings, phase: Phase) -> Result<ExecutionReport, SchedulerError> {
        let started = Instant::now();
        let plan = match self.kind {
            SchedulerKind::Sequential => WavefrontSchedule::sequential(graph),
            _ => graph.compute_wavefronts()?,
        };
        let leaves = graph
            .leaves()
            .iter()
            .map(|l| {
                l.tensor
                    .clone()
                    .or_else(|| bindings.get(l.id).cloned())
                    .ok_or_else(|| SchedulerError::UnboundLeaf(l.name.clone()))
            })
            .collect::<Result<Vec<_>, _>>()?;

        let mut values: Vec<Option<Arc<Tensor>>> = vec![None; graph.len()];
        let mut records = Vec::with_capacity(graph.len());
        let hybrid = if self.kind == SchedulerKind::Hybrid { self.accel } else { None };

        for level in plan.levels() {
            let m = level.len();
            let per_node = if self.kind.splits_matmuls() {
                (self.n_threads / m).max(1)
            } else {
                1
            };
            let mut tasks = Vec::new();
            let mut pending = Vec::with_capacity(m);
            for (idx, &id) in level.iter().enumerate() {
                let node = graph.node(id);
                let inputs = node
                    .inputs
                    .iter()
                    .map(|i| match *i {
                        Input::Leaf(l) => Ok(leaves[l.0].clone()),
                        Input::Node(n) => values[n.0].clone().ok_or(GraphError::Violation { node: id.0, input: n.0 }),
                    })
                    .collect::<Result<Vec<_>, _>>()?;

                let on_accel = hybrid.is_some() && node.backend == Backend::Accel;
                let (delay, stretch) = match &hybrid {
                    Some(a) => {
                        let crossing: usize = node
                            .node_inputs()
                            .filter(|n| graph.node(*n).backend != node.backend)
                            .map(|n| values[n.0].as_ref().map_or(0, |t| t.byte_len()))
                            .sum();
                        let mut d = a.transfer_time(crossing);
                        if on_accel {
                            d += a.launch_latency;
                        }
                        (d, if on_accel { a.compute_stretch() } else { 1.0 })
                    }
                    None => (Duration::ZERO, 1.0),
                };

                let rows = if node.op.is_weight_matmul() { inputs[0].rows() } else { 0 };
                let chunks = if node.op.is_weight_matmul() && !on_accel {
                    per_node.min(rows / MIN_SPLIT_ROWS).max(1)
                } else {
                    1
                };
                let base = idx * per_node;
                // Chunk edges fall on packed row-group boundaries.
                let stride = rows.div_ceil(chunks).next_multiple_of(ROW_GROUP);
                let chunks = if chunks > 1 { rows.div_ceil(stride) } else { 1 };
                for c in 0..chunks {
                    let range: Option<Range<usize>> =
                        (chunks > 1).then(|| (c * stride).min(rows)..((c + 1) * stride).min(rows));
                    tasks.push(Task {
                        node: id,
                        chunk: c,
                        worker: (base + c) % self.n_threads,
                        op: node.op,
                        inputs: inputs.clone(),
                        rows: range,
                        delay,
                        stretch,
                    });
                }
                pending.push(Pending { node: id, chunks, rows });
            }

            let done = self.dispatch(tasks)?;
            let mut by_node: HashMap<NodeId, Vec<Done>> = HashMap::with_capacity(m);
            for d in done {
                by_node.entry(d.node).or_default().push(d);
            }
            for p in pending {
                let mut parts = by_node.remove(&p.node).unwrap_or_default();
                parts.sort_by_key(|d| d.chunk);
                let node = graph.node(p.node);
                let kernel_err = |source| SchedulerError::Kernel {
                    node: p.node,
                    tag: node.tag.to_string(),
                    source,
                };
                if parts.len() != p.chunks {
                    return Err(SchedulerError::PoolClosed);
                }
                let start_ns = parts.iter().map(|d| d.start_ns).min().unwrap_or(0);
                let end_ns = parts.iter().map(|d| d.end_ns).max().unwrap_or(0);
                let worker = parts[0].worker;
                let tensor = if p.chunks == 1 {
                    parts.pop().expect("one part").result.map_err(kernel_err)?
                } else {
                    let mut n = 0;
                    let mut data = Vec::new();
                    for part in parts {
                        let t = part.result.map_err(kernel_err)?;
                        n = t.inner();
                        data.extend_from_slice(t.as_f32()?);
                    }
                    Tensor::from_f32(node.tag.to_string(), &[p.rows, n], data)?
                };
                records.push(ProfileRecord {
                    node_id: p.node.0,
                    op: node.op.kind(),
                    tag: node.tag,
                    phase,
                    worker,
                    backend: node.backend,
                    start_ns,
                    end_ns,
                });
                values[p.node.0] = Some(Arc::new(tensor));
            }
        }

        let outputs = graph
            .outputs()
            .iter()
            .filter_map(|&id| values[id.0].clone().map(|t| (id, t)))
            .collect();
        records.sort_by_key(|r| r.node_id);
        Ok(ExecutionReport {
            outputs,
            trace: ProfileTrace { records },
            wall: started.elapsed(),
        })
    }

    fn dispatch(&self, tasks: Vec<Task>) -> Result<Vec<Done>, SchedulerError> {
        match &self.pool {
            None => Ok(tasks.into_iter().map(|t| pool::perform(t, 0, self.epoch)).collect()),
            Some(pool) => pool.run_all(tasks),
        }
    }
}

/// One-shot convenience wrapper around [`Executor`].
pub fn run(
    graph: &Graph,
    bindings: &LeafBindings,
    kind: SchedulerKind,
    n_threads: usize,
    accel: Option<AccelModel>,
    phase: Phase,
) -> Result<ExecutionReport, SchedulerError> {
    Executor::new(kind, n_threads, accel)?.run(graph, bindings, phase)
}
