use std::fmt;
use std::str::FromStr;

use super::SchedulerError;
use crate::graph::{Backend, Graph};

/// Rule for placing nodes on the modeled accelerator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BackendPolicy {
    AllMain,
    /// Every weight GEMM of layers 0, 2, 4, ...
    #[default]
    WeightMatmulsEvenLayers,
    AllAccel,
}

impl BackendPolicy {
    pub fn name(self) -> &'static str {
        match self {
            BackendPolicy::AllMain => "all-main",
            BackendPolicy::WeightMatmulsEvenLayers => "weight-matmuls-even-layers",
            BackendPolicy::AllAccel => "all-accel",
        }
    }
}

impl fmt::Display for BackendPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BackendPolicy {
    type Err = SchedulerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            BackendPolicy::AllMain,
            BackendPolicy::WeightMatmulsEvenLayers,
            BackendPolicy::AllAccel,
        ]
        .into_iter()
        .find(|p| p.name() == s)
        .ok_or_else(|| SchedulerError::UnknownPolicy(s.to_string()))
    }
}

/// Copy of `graph` with every node labeled per `policy`.
pub fn assign_backends(graph: &Graph, policy: BackendPolicy) -> Graph {
    let mut out = graph.clone();
    for node in graph.nodes() {
        let backend = match policy {
            BackendPolicy::AllMain => Backend::Main,
            BackendPolicy::AllAccel => Backend::Accel,
            BackendPolicy::WeightMatmulsEvenLayers => {
                if node.op.is_weight_matmul() && node.tag.layer.is_some_and(|l| l % 2 == 0) {
                    Backend::Accel
                } else {
                    Backend::Main
                }
            }
        };
        out.set_backend(node.id, backend);
    }
    out
}
