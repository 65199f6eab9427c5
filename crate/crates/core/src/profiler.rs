//! Per-node timing records and their aggregation into op-kind and
//! named-matmul breakdowns.
//!
//! CSV trace schema: `node_id,op,tag,phase,worker,backend,start_ns,end_ns`.
//! JSON breakdown schema: `{phase, total_ns, ops: [{op, ns, calls, share}]}`;
//! the CLI's profile document is an array of those objects with an extra
//! `matmul_tags: [{tag, ns, calls}]` field.
//!
//! Timestamps are nanoseconds on a monotonic clock, taken immediately before
//! and after each kernel invocation, so each record includes a few tens of
//! nanoseconds of clock overhead.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Backend, Graph, NodeId, OpKind, Tag, TagName};

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("no {0} records in trace")]
    EmptyPhase(Phase),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Prefill,
    Decode,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Prefill => "prefill",
            Phase::Decode => "decode",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "prefill" => Ok(Phase::Prefill),
            "decode" => Ok(Phase::Decode),
            _ => Err(format!("unknown phase `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileRecord {
    pub node_id: usize,
    pub op: OpKind,
    pub tag: Tag,
    pub phase: Phase,
    pub worker: usize,
    pub backend: Backend,
    pub start_ns: u64,
    pub end_ns: u64,
}

impl ProfileRecord {
    pub fn duration_ns(&self) -> u64 {
        self.end_ns.saturating_sub(self.start_ns)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileTrace {
    pub records: Vec<ProfileRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpShare {
    pub op: OpKind,
    pub ns: u64,
    pub calls: u64,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpBreakdown {
    pub phase: Phase,
    pub total_ns: u64,
    pub ops: Vec<OpShare>,
}

impl OpBreakdown {
    pub fn share(&self, op: OpKind) -> f64 {
        self.ops.iter().find(|o| o.op == op).map_or(0.0, |o| o.share)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagTotal {
    pub tag: String,
    pub ns: u64,
    pub calls: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatmulTagBreakdown {
    pub phase: Phase,
    pub tags: Vec<TagTotal>,
}

impl MatmulTagBreakdown {
    pub fn ns(&self, tag: TagName) -> u64 {
        self.tags
            .iter()
            .find(|t| t.tag == tag.as_str())
            .map_or(0, |t| t.ns)
    }

    /// `(ffn_gate + ffn_up + ffn_down, Qcur + Kcur + Vcur + kqv_out)`.
    pub fn ffn_vs_attention(&self) -> (u64, u64) {
        TagName::WEIGHT_MATMULS.iter().fold((0, 0), |(f, a), &t| {
            if t.is_ffn_matmul() {
                (f + self.ns(t), a)
            } else {
                (f, a + self.ns(t))
            }
        })
    }
}

/// One phase of the CLI profile document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseProfile {
    #[serde(flatten)]
    pub ops: OpBreakdown,
    pub matmul_tags: Vec<TagTotal>,
}

impl ProfileTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn extend(&mut self, other: &ProfileTrace) {
        self.records.extend_from_slice(&other.records);
    }

    pub fn phase(&self, phase: Phase) -> impl Iterator<Item = &ProfileRecord> {
        self.records.iter().filter(move |r| r.phase == phase)
    }

    /// Sums record durations per op kind. Kinds appear in [`OpKind::ALL`]
    /// order; kinds without records are omitted.
    pub fn aggregate_by_op(&self, phase: Phase) -> Result<OpBreakdown, ProfileError> {
        let mut totals: HashMap<OpKind, (u64, u64)> = HashMap::new();
        let mut total_ns = 0u64;
        let mut any = false;
        for r in self.phase(phase) {
            any = true;
            let e = totals.entry(r.op).or_default();
            e.0 += r.duration_ns();
            e.1 += 1;
            total_ns += r.duration_ns();
        }
        if !any {
            return Err(ProfileError::EmptyPhase(phase));
        }
        let ops = OpKind::ALL
            .iter()
            .filter_map(|k| {
                totals.get(k).map(|&(ns, calls)| OpShare {
                    op: *k,
                    ns,
                    calls,
                    share: if total_ns == 0 {
                        1.0 / totals.len() as f64
                    } else {
                        ns as f64 / total_ns as f64
                    },
                })
            })
            .collect();
        Ok(OpBreakdown { phase, total_ns, ops })
    }

    /// Totals for the seven weight GEMM tags, summed across layers.
    pub fn aggregate_by_matmul_tag(&self, phase: Phase) -> MatmulTagBreakdown {
        let tags = TagName::WEIGHT_MATMULS
            .iter()
            .map(|&name| {
                let (ns, calls) = self
                    .phase(phase)
                    .filter(|r| r.op == OpKind::MulMat && r.tag.name == name)
                    .fold((0, 0), |(ns, c), r| (ns + r.duration_ns(), c + 1));
                TagTotal {
                    tag: name.as_str().to_string(),
                    ns,
                    calls,
                }
            })
            .collect();
        MatmulTagBreakdown { phase, tags }
    }

    /// Op and matmul-tag breakdowns for every phase present in the trace.
    pub fn profile_document(&self) -> Vec<PhaseProfile> {
        [Phase::Prefill, Phase::Decode]
            .into_iter()
            .filter_map(|p| {
                self.aggregate_by_op(p).ok().map(|ops| PhaseProfile {
                    ops,
                    matmul_tags: self.aggregate_by_matmul_tag(p).tags,
                })
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), ProfileError> {
        let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        wr.write_record(CSV_HEADER)?;
        for r in &self.records {
            wr.serialize(r)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, ProfileError> {
        let mut rd = csv::Reader::from_reader(r);
        let records = rd.deserialize().collect::<Result<_, _>>()?;
        Ok(ProfileTrace { records })
    }

    pub fn export(&self, path: impl AsRef<Path>, format: ExportFormat) -> Result<(), ProfileError> {
        let mut w = BufWriter::new(File::create(path)?);
        match format {
            ExportFormat::Csv => self.write_csv(&mut w)?,
            ExportFormat::Json => serde_json::to_writer_pretty(&mut w, &self.records)?,
        }
        w.flush()?;
        Ok(())
    }

    pub fn import(path: impl AsRef<Path>, format: ExportFormat) -> Result<Self, ProfileError> {
        let r = BufReader::new(File::open(path)?);
        match format {
            ExportFormat::Csv => Self::read_csv(r),
            ExportFormat::Json => Ok(ProfileTrace {
                records: serde_json::from_reader(r)?,
            }),
        }
    }
}

pub const CSV_HEADER: [&str; 8] = [
    "node_id", "op", "tag", "phase", "worker", "backend", "start_ns", "end_ns",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Json,
}

impl OpBreakdown {
    pub fn export(&self, path: impl AsRef<Path>, format: ExportFormat) -> Result<(), ProfileError> {
        let mut w = BufWriter::new(File::create(path)?);
        match format {
            ExportFormat::Json => serde_json::to_writer_pretty(&mut w, self)?,
            ExportFormat::Csv => {
                let mut wr = csv::Writer::from_writer(&mut w);
                wr.write_record(["phase", "op", "ns", "calls", "share"])?;
                for o in &self.ops {
                    wr.write_record([
                        self.phase.to_string(),
                        o.op.to_string(),
                        o.ns.to_string(),
                        o.calls.to_string(),
                        o.share.to_string(),
                    ])?;
                }
                wr.flush()?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// A node that started before one of its inputs finished.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduleViolation {
    pub node: NodeId,
    pub input: NodeId,
    pub start_ns: u64,
    pub input_end_ns: u64,
}

/// Checks one execution step's records against the graph: every node must
/// appear exactly once and start no earlier than all of its node inputs end.
/// Returns the nodes missing or duplicated, and the ordering violations.
pub fn check_step(graph: &Graph, records: &[ProfileRecord]) -> (Vec<NodeId>, Vec<ScheduleViolation>) {
    let mut seen = vec![0usize; graph.len()];
    let mut by_node: Vec<Option<&ProfileRecord>> = vec![None; graph.len()];
    for r in records {
        if r.node_id < graph.len() {
            seen[r.node_id] += 1;
            by_node[r.node_id] = Some(r);
        }
    }
    let coverage = seen
        .iter()
        .enumerate()
        .filter(|(_, &c)| c != 1)
        .map(|(i, _)| NodeId(i))
        .collect();
    let mut violations = Vec::new();
    for node in graph.nodes() {
        let Some(rec) = by_node[node.id.0] else { continue };
        for input in node.node_inputs() {
            if let Some(dep) = by_node[input.0] {
                if rec.start_ns < dep.end_ns {
                    violations.push(ScheduleViolation {
                        node: node.id,
                        input,
                        start_ns: rec.start_ns,
                        input_end_ns: dep.end_ns,
                    });
                }
            }
        }
    }
    (coverage, violations)
}
