//! Maps a node's op onto the kernels.

use std::ops::Range;
use std::sync::Arc;

use crate::graph::{MatMulMode, Op};
use crate::kernels::{self, Elementwise, KernelError};
use crate::tensor::Tensor;

fn arity(op: &Op, inputs: &[Arc<Tensor>], n: usize) -> Result<(), KernelError> {
    if inputs.len() != n {
        return Err(KernelError::Dimension(format!(
            "{} expects {n} inputs, got {}",
            op.kind(),
            inputs.len()
        )));
    }
    Ok(())
}

fn as_indices(t: &Tensor) -> Result<Vec<usize>, KernelError> {
    Ok(t.as_f32()?.iter().map(|&v| v as usize).collect())
}

/// Runs `op`. For weight matmuls `rows` selects a contiguous slice of output
/// rows, returned as `[rows.len(), n_tok]`.
pub(crate) fn execute(op: &Op, inputs: &[Arc<Tensor>], rows: Option<Range<usize>>) -> Result<Tensor, KernelError> {
    match *op {
        Op::EmbedLookup => {
            arity(op, inputs, 2)?;
            let ids = as_indices(&inputs[0])?;
            let rows = kernels::embed_lookup(&inputs[1], &ids)?;
            let d = rows.shape()[1];
            let feature_major = kernels::transpose(rows.as_f32()?, ids.len(), d);
            Ok(Tensor::from_f32("inpL", &[d, ids.len()], feature_major)?)
        }
        Op::RmsNorm { eps } => {
            arity(op, inputs, 2)?;
            kernels::rmsnorm_columns(&inputs[0], &inputs[1], eps)
        }
        Op::MulMat(MatMulMode::Weight) => {
            arity(op, inputs, 2)?;
            let (w, x) = (&inputs[0], &inputs[1]);
            match rows {
                None => kernels::matmul(w, x),
                Some(r) => {
                    let n = x.inner();
                    let len = r.len();
                    let out = kernels::matmul_rows(w, x, r)?;
                    Ok(Tensor::from_f32("mul_mat_rows", &[len, n], out)?)
                }
            }
        }
        Op::MulMat(MatMulMode::AttnScores { n_heads, n_kv_heads }) => {
            arity(op, inputs, 3)?;
            kernels::attn_scores(&inputs[0], &inputs[1], &inputs[2], n_heads, n_kv_heads)
        }
        Op::MulMat(MatMulMode::AttnValues { n_heads, n_kv_heads }) => {
            arity(op, inputs, 3)?;
            kernels::attn_values(&inputs[0], &inputs[1], &inputs[2], n_heads, n_kv_heads)
        }
        Op::Rope { theta_base, head_dim } => {
            arity(op, inputs, 2)?;
            let positions = as_indices(&inputs[1])?;
            kernels::rope(&inputs[0], head_dim, &positions, theta_base)
        }
        Op::Scale { factor } => {
            arity(op, inputs, 1)?;
            kernels::scale(&inputs[0], factor)
        }
        Op::SoftmaxCausal => {
            arity(op, inputs, 1)?;
            let s = inputs[0].shape();
            if s.len() < 2 || s[s.len() - 1] < s[s.len() - 2] {
                return Err(KernelError::Dimension(format!("softmax over scores {s:?}")));
            }
            let n_past = s[s.len() - 1] - s[s.len() - 2];
            kernels::softmax_causal(&inputs[0], n_past)
        }
        Op::EltAdd => {
            arity(op, inputs, 2)?;
            kernels::elementwise(Elementwise::Add, &inputs[0], Some(&inputs[1]))
        }
        Op::EltMul => {
            arity(op, inputs, 2)?;
            kernels::elementwise(Elementwise::Mul, &inputs[0], Some(&inputs[1]))
        }
        Op::Silu => {
            arity(op, inputs, 1)?;
            kernels::elementwise(Elementwise::Silu, &inputs[0], None)
        }
    }
}
