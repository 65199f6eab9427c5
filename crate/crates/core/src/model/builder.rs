//! Decoder graph construction.
//!
//! Per layer the builder emits, in order: attention RmsNorm, the Q/K/V
//! projections, rope on Q and K, the score matmul, the `1/√head_dim` scale,
//! causal softmax, the value matmul, the output projection, the attention
//! residual, the FFN RmsNorm, the gate and up projections, SiLU, the gate
//! product, the down projection and the FFN residual. The graph starts with
//! the embedding lookup and ends with the final norm and output projection.
//!
//! KV caches are not graph nodes: each layer reads `k_cache.{l}` and
//! `v_cache.{l}` input leaves, and the runtime appends the `Krope`/`Vcur`
//! outputs of every step.

use std::sync::Arc;

use super::{ModelConfig, ModelError, WeightSet};
use crate::graph::{Graph, Input, LeafId, MatMulMode, NodeId, Op, Tag, TagName};
use crate::tensor::Tensor;

/// Token ids (as f32 values) for the current step.
pub const LEAF_TOKENS: &str = "tokens";
/// Absolute positions (as f32 values) of the current step's tokens.
pub const LEAF_POSITIONS: &str = "positions";

pub fn k_cache_leaf(layer: usize) -> String {
    format!("k_cache.{layer}")
}

pub fn v_cache_leaf(layer: usize) -> String {
    format!("v_cache.{layer}")
}

/// A built decoder graph plus handles to the nodes and leaves the runtime
/// needs.
#[derive(Debug, Clone)]
pub struct LlamaGraph {
    pub graph: Graph,
    pub config: ModelConfig,
    pub logits: NodeId,
    /// Post-rope keys per layer, `[kv_dim, n_tok]`.
    pub k_new: Vec<NodeId>,
    /// Values per layer, `[kv_dim, n_tok]`.
    pub v_new: Vec<NodeId>,
    pub tokens: LeafId,
    pub positions: LeafId,
    pub k_cache: Vec<LeafId>,
    pub v_cache: Vec<LeafId>,
}

pub fn build_llama(config: &ModelConfig, weights: &WeightSet) -> Result<LlamaGraph, ModelError> {
    config.validate()?;
    weights.check(config)?;

    let mut g = Graph::new();
    let tokens = g.add_input(LEAF_TOKENS)?;
    let positions = g.add_input(LEAF_POSITIONS)?;
    let weight = |g: &mut Graph, t: &Arc<Tensor>| -> Result<Input, ModelError> {
        Ok(Input::Leaf(g.add_weight(t.name().to_string(), t.clone())?))
    };
    let node = |n: NodeId| Input::Node(n);

    let tok_embed = weight(&mut g, &weights.tok_embed)?;
    let mut inp_l = g.add_node(
        Op::EmbedLookup,
        &[Input::Leaf(tokens), tok_embed],
        Tag::global(TagName::InpL),
    )?;

    let eps = config.norm_eps;
    let head_dim = config.head_dim();
    let rope = Op::Rope {
        theta_base: config.rope_theta,
        head_dim,
    };
    let w_mm = Op::MulMat(MatMulMode::Weight);
    let (n_heads, n_kv_heads) = (config.n_heads, config.n_kv_heads);

    let mut k_new = Vec::with_capacity(config.n_layers);
    let mut v_new = Vec::with_capacity(config.n_layers);
    let mut k_cache = Vec::with_capacity(config.n_layers);
    let mut v_cache = Vec::with_capacity(config.n_layers);

    for (l, lw) in weights.layers.iter().enumerate() {
        let tag = |name| Tag::layer(name, l);
        let kc = g.add_input(k_cache_leaf(l))?;
        let vc = g.add_input(v_cache_leaf(l))?;
        k_cache.push(kc);
        v_cache.push(vc);

        let attn_norm = weight(&mut g, &lw.attn_norm)?;
        let norm = g.add_node(Op::RmsNorm { eps }, &[node(inp_l), attn_norm], tag(TagName::NormInp))?;

        let wq = weight(&mut g, &lw.wq)?;
        let wk = weight(&mut g, &lw.wk)?;
        let wv = weight(&mut g, &lw.wv)?;
        let q = g.add_node(w_mm, &[wq, node(norm)], tag(TagName::Qcur))?;
        let k = g.add_node(w_mm, &[wk, node(norm)], tag(TagName::Kcur))?;
        let v = g.add_node(w_mm, &[wv, node(norm)], tag(TagName::Vcur))?;

        let pos = Input::Leaf(positions);
        let q_rope = g.add_node(rope, &[node(q), pos], tag(TagName::Qrope))?;
        let k_rope = g.add_node(rope, &[node(k), pos], tag(TagName::Krope))?;

        let kq = g.add_node(
            Op::MulMat(MatMulMode::AttnScores { n_heads, n_kv_heads }),
            &[node(q_rope), node(k_rope), Input::Leaf(kc)],
            tag(TagName::Kq),
        )?;
        let kq_scaled = g.add_node(
            Op::Scale {
                factor: 1.0 / (head_dim as f32).sqrt(),
            },
            &[node(kq)],
            tag(TagName::KqScaled),
        )?;
        let kq_soft = g.add_node(Op::SoftmaxCausal, &[node(kq_scaled)], tag(TagName::KqSoft))?;
        let kqv = g.add_node(
            Op::MulMat(MatMulMode::AttnValues { n_heads, n_kv_heads }),
            &[node(kq_soft), node(v), Input::Leaf(vc)],
            tag(TagName::Kqv),
        )?;
        let wo = weight(&mut g, &lw.wo)?;
        let kqv_out = g.add_node(w_mm, &[wo, node(kqv)], tag(TagName::KqvOut))?;
        let ffn_inp = g.add_node(Op::EltAdd, &[node(kqv_out), node(inp_l)], tag(TagName::FfnInp))?;

        let ffn_norm_w = weight(&mut g, &lw.ffn_norm)?;
        let ffn_norm = g.add_node(
            Op::RmsNorm { eps },
            &[node(ffn_inp), ffn_norm_w],
            tag(TagName::FfnNorm),
        )?;
        let w_gate = weight(&mut g, &lw.w_gate)?;
        let w_up = weight(&mut g, &lw.w_up)?;
        let w_down = weight(&mut g, &lw.w_down)?;
        let gate = g.add_node(w_mm, &[w_gate, node(ffn_norm)], tag(TagName::FfnGate))?;
        let up = g.add_node(w_mm, &[w_up, node(ffn_norm)], tag(TagName::FfnUp))?;
        let silu = g.add_node(Op::Silu, &[node(gate)], tag(TagName::FfnSilu))?;
        let par = g.add_node(Op::EltMul, &[node(silu), node(up)], tag(TagName::FfnPar))?;
        let down = g.add_node(w_mm, &[w_down, node(par)], tag(TagName::FfnDown))?;
        inp_l = g.add_node(Op::EltAdd, &[node(down), node(ffn_inp)], tag(TagName::FfnOut))?;

        k_new.push(k_rope);
        v_new.push(v);
    }

    let final_norm_w = weight(&mut g, &weights.final_norm_w)?;
    let final_norm = g.add_node(
        Op::RmsNorm { eps },
        &[node(inp_l), final_norm_w],
        Tag::global(TagName::FinalNorm),
    )?;
    let w_output = weight(&mut g, &weights.w_output)?;
    let logits = g.add_node(w_mm, &[w_output, node(final_norm)], Tag::global(TagName::FinalOut))?;

    g.mark_output(logits)?;
    for (&k, &v) in k_new.iter().zip(&v_new) {
        g.mark_output(k)?;
        g.mark_output(v)?;
    }

    Ok(LlamaGraph {
        graph: g,
        config: *config,
        logits,
        k_new,
        v_new,
        tokens,
        positions,
        k_cache,
        v_cache,
    })
}
