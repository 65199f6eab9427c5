//! Compute-graph IR: operation nodes over named leaf tensors, plus the
//! topological analysis shared by every scheduler.
//!
//! Node ids are dense and assigned in insertion order, and a node may only
//! reference nodes that already exist, so id order is always a valid
//! topological order.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LeafId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("unknown input {0}")]
    UnknownInput(usize),
    #[error("unknown leaf {0}")]
    UnknownLeaf(usize),
    #[error("duplicate leaf name `{0}`")]
    DuplicateLeaf(String),
    #[error("topological violation: node {node} consumes node {input}")]
    Violation { node: usize, input: usize },
    #[error("node {node} has id out of sequence (position {position})")]
    IdOutOfSequence { node: usize, position: usize },
    #[error("unknown tag `{0}`")]
    UnknownTag(String),
}

/// Operation category, the unit the profiler aggregates over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OpKind {
    MulMat,
    EltAdd,
    EltMul,
    Silu,
    RmsNorm,
    Rope,
    SoftmaxCausal,
    Scale,
    EmbedLookup,
}

impl OpKind {
    pub const ALL: [OpKind; 9] = [
        OpKind::MulMat,
        OpKind::EltAdd,
        OpKind::EltMul,
        OpKind::Silu,
        OpKind::RmsNorm,
        OpKind::Rope,
        OpKind::SoftmaxCausal,
        OpKind::Scale,
        OpKind::EmbedLookup,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::MulMat => "MulMat",
            OpKind::EltAdd => "EltAdd",
            OpKind::EltMul => "EltMul",
            OpKind::Silu => "Silu",
            OpKind::RmsNorm => "RmsNorm",
            OpKind::Rope => "Rope",
            OpKind::SoftmaxCausal => "SoftmaxCausal",
            OpKind::Scale => "Scale",
            OpKind::EmbedLookup => "EmbedLookup",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OpKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown op kind `{s}`"))
    }
}

/// Flavour of a `MulMat` node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MatMulMode {
    /// `inputs = [weight leaf, activation]`; one of the parameter GEMMs.
    Weight,
    /// Per-head `Q·Kᵀ` over cached plus current keys.
    /// `inputs = [q, k_cur, k_cache leaf]`.
    AttnScores { n_heads: usize, n_kv_heads: usize },
    /// Per-head `P·V` over cached plus current values.
    /// `inputs = [probs, v_cur, v_cache leaf]`.
    AttnValues { n_heads: usize, n_kv_heads: usize },
}

/// An operation together with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Op {
    MulMat(MatMulMode),
    EltAdd,
    EltMul,
    Silu,
    RmsNorm { eps: f32 },
    Rope { theta_base: f32, head_dim: usize },
    SoftmaxCausal,
    Scale { factor: f32 },
    EmbedLookup,
}

impl Op {
    pub fn kind(&self) -> OpKind {
        match self {
            Op::MulMat(_) => OpKind::MulMat,
            Op::EltAdd => OpKind::EltAdd,
            Op::EltMul => OpKind::EltMul,
            Op::Silu => OpKind::Silu,
            Op::RmsNorm { .. } => OpKind::RmsNorm,
            Op::Rope { .. } => OpKind::Rope,
            Op::SoftmaxCausal => OpKind::SoftmaxCausal,
            Op::Scale { .. } => OpKind::Scale,
            Op::EmbedLookup => OpKind::EmbedLookup,
        }
    }

    pub fn is_weight_matmul(&self) -> bool {
        matches!(self, Op::MulMat(MatMulMode::Weight))
    }
}

/// Semantic names carried by nodes; the spelling follows the reference
/// runtime's tensor names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TagName {
    InpL,
    NormInp,
    Qcur,
    Kcur,
    Vcur,
    Qrope,
    Krope,
    Kq,
    KqScaled,
    KqSoft,
    Kqv,
    KqvOut,
    AttnOut,
    FfnInp,
    FfnNorm,
    FfnGate,
    FfnUp,
    FfnSilu,
    FfnPar,
    FfnDown,
    FfnOut,
    FinalNorm,
    FinalOut,
    Other,
}

impl TagName {
    const ALL: [TagName; 24] = [
        TagName::InpL,
        TagName::NormInp,
        TagName::Qcur,
        TagName::Kcur,
        TagName::Vcur,
        TagName::Qrope,
        TagName::Krope,
        TagName::Kq,
        TagName::KqScaled,
        TagName::KqSoft,
        TagName::Kqv,
        TagName::KqvOut,
        TagName::AttnOut,
        TagName::FfnInp,
        TagName::FfnNorm,
        TagName::FfnGate,
        TagName::FfnUp,
        TagName::FfnSilu,
        TagName::FfnPar,
        TagName::FfnDown,
        TagName::FfnOut,
        TagName::FinalNorm,
        TagName::FinalOut,
        TagName::Other,
    ];

    /// The seven parameter GEMMs of a decoder layer.
    pub const WEIGHT_MATMULS: [TagName; 7] = [
        TagName::Qcur,
        TagName::Kcur,
        TagName::Vcur,
        TagName::KqvOut,
        TagName::FfnGate,
        TagName::FfnUp,
        TagName::FfnDown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TagName::InpL => "inpL",
            TagName::NormInp => "norm_inp",
            TagName::Qcur => "Qcur",
            TagName::Kcur => "Kcur",
            TagName::Vcur => "Vcur",
            TagName::Qrope => "Qrope",
            TagName::Krope => "Krope",
            TagName::Kq => "kq",
            TagName::KqScaled => "kq_scaled",
            TagName::KqSoft => "kq_soft",
            TagName::Kqv => "kqv",
            TagName::KqvOut => "kqv_out",
            TagName::AttnOut => "attn_out",
            TagName::FfnInp => "ffn_inp",
            TagName::FfnNorm => "ffn_norm",
            TagName::FfnGate => "ffn_gate",
            TagName::FfnUp => "ffn_up",
            TagName::FfnSilu => "ffn_silu",
            TagName::FfnPar => "ffn_par",
            TagName::FfnDown => "ffn_down",
            TagName::FfnOut => "ffn_out",
            TagName::FinalNorm => "final_norm",
            TagName::FinalOut => "final_out",
            TagName::Other => "other",
        }
    }

    pub fn is_ffn_matmul(self) -> bool {
        matches!(self, TagName::FfnGate | TagName::FfnUp | TagName::FfnDown)
    }
}

impl fmt::Display for TagName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TagName {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TagName::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| GraphError::UnknownTag(s.to_string()))
    }
}

/// Semantic name plus optional layer index, rendered `Qcur-3` or `final_out`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Tag {
    pub name: TagName,
    pub layer: Option<usize>,
}

impl Tag {
    pub fn global(name: TagName) -> Self {
        Tag { name, layer: None }
    }

    pub fn layer(name: TagName, layer: usize) -> Self {
        Tag {
            name,
            layer: Some(layer),
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.layer {
            Some(l) => write!(f, "{}-{}", self.name, l),
            None => write!(f, "{}", self.name),
        }
    }
}

impl FromStr for Tag {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some((name, layer)) = s.rsplit_once('-') {
            if let Ok(l) = layer.parse::<usize>() {
                return Ok(Tag::layer(name.parse()?, l));
            }
        }
        Ok(Tag::global(s.parse()?))
    }
}

impl Serialize for Tag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Tag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Main,
    Accel,
}

impl Backend {
    pub fn as_str(self) -> &'static str {
        match self {
            Backend::Main => "main",
            Backend::Accel => "accel",
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "main" => Ok(Backend::Main),
            "accel" => Ok(Backend::Accel),
            _ => Err(format!("unknown backend `{s}`")),
        }
    }
}

/// Reference to a node output or a leaf tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Input {
    Node(NodeId),
    Leaf(LeafId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: NodeId,
    pub op: Op,
    pub inputs: Vec<Input>,
    pub tag: Tag,
    pub backend: Backend,
}

impl Node {
    pub fn node_inputs(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.inputs.iter().filter_map(|i| match i {
            Input::Node(n) => Some(*n),
            Input::Leaf(_) => None,
        })
    }
}

/// A named leaf. Weights carry their tensor; runtime inputs (token ids,
/// positions, KV cache) are bound per execution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Leaf {
    pub id: LeafId,
    pub name: String,
    #[serde(skip)]
    pub tensor: Option<Arc<Tensor>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Graph {
    nodes: Vec<Node>,
    leaves: Vec<Leaf>,
    outputs: Vec<NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaves(&self) -> &[Leaf] {
        &self.leaves
    }

    pub fn leaf(&self, id: LeafId) -> &Leaf {
        &self.leaves[id.0]
    }

    pub fn leaf_by_name(&self, name: &str) -> Option<&Leaf> {
        self.leaves.iter().find(|l| l.name == name)
    }

    pub fn outputs(&self) -> &[NodeId] {
        &self.outputs
    }

    pub fn mark_output(&mut self, id: NodeId) -> Result<(), GraphError> {
        if id.0 >= self.nodes.len() {
            return Err(GraphError::UnknownInput(id.0));
        }
        if !self.outputs.contains(&id) {
            self.outputs.push(id);
        }
        Ok(())
    }

    /// Registers a weight leaf holding `tensor`.
    pub fn add_weight(&mut self, name: impl Into<String>, tensor: Arc<Tensor>) -> Result<LeafId, GraphError> {
        self.push_leaf(name.into(), Some(tensor))
    }

    /// Registers a leaf whose tensor is supplied at execution time.
    pub fn add_input(&mut self, name: impl Into<String>) -> Result<LeafId, GraphError> {
        self.push_leaf(name.into(), None)
    }

    fn push_leaf(&mut self, name: String, tensor: Option<Arc<Tensor>>) -> Result<LeafId, GraphError> {
        if self.leaf_by_name(&name).is_some() {
            return Err(GraphError::DuplicateLeaf(name));
        }
        let id = LeafId(self.leaves.len());
        self.leaves.push(Leaf { id, name, tensor });
        Ok(id)
    }

    /// Appends a node. Every input must already exist, which keeps id order
    /// topological.
    pub fn add_node(&mut self, op: Op, inputs: &[Input], tag: Tag) -> Result<NodeId, GraphError> {
        for input in inputs {
            match *input {
                Input::Node(n) if n.0 >= self.nodes.len() => {
                    return Err(GraphError::UnknownInput(n.0))
                }
                Input::Leaf(l) if l.0 >= self.leaves.len() => {
                    return Err(GraphError::UnknownLeaf(l.0))
                }
                _ => {}
            }
        }
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            id,
            op,
            inputs: inputs.to_vec(),
            tag,
            backend: Backend::Main,
        });
        Ok(id)
    }

    pub fn set_backend(&mut self, id: NodeId, backend: Backend) {
        self.nodes[id.0].backend = backend;
    }

    /// First node (by id) carrying `tag`.
    pub fn find(&self, tag: Tag) -> Option<NodeId> {
        self.nodes.iter().find(|n| n.tag == tag).map(|n| n.id)
    }

    /// Checks that ids are dense and that every node input precedes the
    /// node. Since ids are totally ordered this also rules out cycles.
    pub fn validate_topological(&self) -> Result<(), GraphError> {
        for (position, node) in self.nodes.iter().enumerate() {
            if node.id.0 != position {
                return Err(GraphError::IdOutOfSequence {
                    node: node.id.0,
                    position,
                });
            }
            for input in &node.inputs {
                match *input {
                    Input::Node(n) if n.0 >= node.id.0 => {
                        return Err(GraphError::Violation {
                            node: node.id.0,
                            input: n.0,
                        })
                    }
                    Input::Leaf(l) if l.0 >= self.leaves.len() => {
                        return Err(GraphError::UnknownLeaf(l.0))
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    /// Groups nodes into dependency levels: a node sits one level above its
    /// deepest node input, and nodes fed only by leaves form level 0.
    pub fn compute_wavefronts(&self) -> Result<WavefrontSchedule, GraphError> {
        self.validate_topological()?;
        let mut level_of = vec![0usize; self.nodes.len()];
        let mut levels: Vec<Vec<NodeId>> = Vec::new();
        for node in &self.nodes {
            let level = node
                .node_inputs()
                .map(|n| level_of[n.0] + 1)
                .max()
                .unwrap_or(0);
            level_of[node.id.0] = level;
            if levels.len() <= level {
                levels.resize_with(level + 1, Vec::new);
            }
            levels[level].push(node.id);
        }
        Ok(WavefrontSchedule { levels, level_of })
    }

    /// Text dump, one line per node:
    /// `id<TAB>opkind<TAB>tag<TAB>inputs=[...]<TAB>level=k`.
    /// Node inputs are printed as ids, leaf inputs by name.
    pub fn debug_dump(&self) -> Result<String, GraphError> {
        let schedule = self.compute_wavefronts()?;
        let mut out = String::new();
        for node in &self.nodes {
            let inputs: Vec<String> = node
                .inputs
                .iter()
                .map(|i| match i {
                    Input::Node(n) => n.0.to_string(),
                    Input::Leaf(l) => self.leaves[l.0].name.clone(),
                })
                .collect();
            writeln!(
                out,
                "{}\t{}\t{}\tinputs=[{}]\tlevel={}",
                node.id.0,
                node.op.kind(),
                node.tag,
                inputs.join(","),
                schedule.level_of(node.id)
            )
            .expect("writing to a String cannot fail");
        }
        Ok(out)
    }

    /// Node count per op kind.
    pub fn op_histogram(&self) -> HashMap<OpKind, usize> {
        let mut h = HashMap::new();
        for n in &self.nodes {
            *h.entry(n.op.kind()).or_insert(0) += 1;
        }
        h
    }
}

/// Partition of node ids into dependency levels, in execution order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WavefrontSchedule {
    levels: Vec<Vec<NodeId>>,
    level_of: Vec<usize>,
}

impl WavefrontSchedule {
    /// One node per level in id order; the serial baseline's plan.
    pub fn sequential(graph: &Graph) -> Self {
        WavefrontSchedule {
            levels: graph.nodes().iter().map(|n| vec![n.id]).collect(),
            level_of: (0..graph.len()).collect(),
        }
    }

    pub fn levels(&self) -> &[Vec<NodeId>] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn level_of(&self, id: NodeId) -> usize {
        self.level_of[id.0]
    }
}
