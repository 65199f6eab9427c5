//! Normalization, rotary embedding, softmax and elementwise kernels.
//!
//! Activations are feature-major: a `[d, n_tok]` tensor holds one token per
//! column.

use super::quant::dequantize_into;
use super::KernelError;
use crate::tensor::Tensor;

/// `out[i] = weight[i] * x[i] / sqrt(mean(x²) + eps)`.
pub fn rmsnorm(x: &[f32], weight: &[f32], eps: f32) -> Result<Vec<f32>, KernelError> {
    if x.len() != weight.len() {
        return Err(KernelError::Dimension(format!(
            "rmsnorm: input length {} vs weight length {}",
            x.len(),
            weight.len()
        )));
    }
    let mut sum = 0.0f32;
    for v in x {
        sum += v * v;
    }
    let inv = 1.0 / (sum / x.len() as f32 + eps).sqrt();
    Ok(x.iter().zip(weight).map(|(v, w)| w * (v * inv)).collect())
}

/// [`rmsnorm`] applied to every column of a `[d, n]` activation.
pub fn rmsnorm_columns(x: &Tensor, weight: &Tensor, eps: f32) -> Result<Tensor, KernelError> {
    let (d, n) = as_matrix(x)?;
    let w = weight.as_f32()?;
    let xs = x.as_f32()?;
    let mut out = vec![0.0f32; d * n];
    let mut col = vec![0.0f32; d];
    for j in 0..n {
        for i in 0..d {
            col[i] = xs[i * n + j];
        }
        let normed = rmsnorm(&col, w, eps)?;
        for i in 0..d {
            out[i * n + j] = normed[i];
        }
    }
    Ok(Tensor::from_f32("rms_norm", x.shape(), out)?)
}

/// Rotates consecutive feature pairs `(x[2i], x[2i+1])` of every head by
/// `position * theta_base^(-2i / head_dim)`.
///
/// `x` is `[n_heads * head_dim, n_tok]` (or `[n_heads, head_dim, n_tok]`),
/// `positions` has one entry per token column.
pub fn rope(x: &Tensor, head_dim: usize, positions: &[usize], theta_base: f32) -> Result<Tensor, KernelError> {
    if !head_dim.is_multiple_of(2) {
        return Err(KernelError::OddHeadDim(head_dim));
    }
    let n = *x.shape().last().unwrap_or(&1);
    let rows = x.numel() / n.max(1);
    if head_dim == 0 || !rows.is_multiple_of(head_dim) {
        return Err(KernelError::Dimension(format!(
            "rope: {rows} feature rows not divisible by head_dim {head_dim}"
        )));
    }
    if positions.len() != n {
        return Err(KernelError::Dimension(format!(
            "rope: {} positions for {n} tokens",
            positions.len()
        )));
    }
    let xs = x.as_f32()?;
    let mut out = xs.to_vec();
    let half = head_dim / 2;
    let inv_freq: Vec<f32> = (0..half)
        .map(|i| theta_base.powf(-((2 * i) as f32) / head_dim as f32))
        .collect();
    for (j, &p) in positions.iter().enumerate() {
        let rot: Vec<(f32, f32)> = inv_freq
            .iter()
            .map(|f| {
                let angle = p as f32 * f;
                (angle.cos(), angle.sin())
            })
            .collect();
        for head in 0..rows / head_dim {
            for (i, &(c, s)) in rot.iter().enumerate() {
                let r0 = (head * head_dim + 2 * i) * n + j;
                let r1 = r0 + n;
                let (a, b) = (xs[r0], xs[r1]);
                out[r0] = a * c - b * s;
                out[r1] = a * s + b * c;
            }
        }
    }
    Ok(Tensor::from_f32("rope", x.shape(), out)?)
}

/// Causal softmax over the last extent of `[.., n_q, n_kv]` scores.
///
/// Query row `q` sees key columns `0..=n_past + q`; the rest are written as
/// zero.
pub fn softmax_causal(scores: &Tensor, n_past: usize) -> Result<Tensor, KernelError> {
    let shape = scores.shape();
    if shape.len() < 2 {
        return Err(KernelError::Rank {
            name: scores.name().to_string(),
            expected: 2,
            got: shape.len(),
        });
    }
    let n_kv = shape[shape.len() - 1];
    let n_q = shape[shape.len() - 2];
    if n_kv != n_past + n_q {
        return Err(KernelError::CausalShape { n_q, n_kv, n_past });
    }
    let xs = scores.as_f32()?;
    let mut out = vec![0.0f32; xs.len()];
    for (row_idx, (src, dst)) in xs.chunks(n_kv).zip(out.chunks_mut(n_kv)).enumerate() {
        let allowed = n_past + row_idx % n_q + 1;
        softmax_row(&src[..allowed], &mut dst[..allowed]);
    }
    Ok(Tensor::from_f32("softmax", shape, out)?)
}

fn softmax_row(src: &[f32], dst: &mut [f32]) {
    let max = src.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = (s - max).exp();
        sum += *d;
    }
    for d in dst.iter_mut() {
        *d /= sum;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Mul,
    Silu,
}

/// `Add: a + b`, `Mul: a ⊙ b`, `Silu: a · σ(a)` (ignores `b`).
pub fn elementwise(kind: Elementwise, a: &Tensor, b: Option<&Tensor>) -> Result<Tensor, KernelError> {
    let xs = a.as_f32()?;
    let out: Vec<f32> = match kind {
        Elementwise::Silu => xs.iter().map(|&v| v / (1.0 + (-v).exp())).collect(),
        Elementwise::Add | Elementwise::Mul => {
            let b = b.ok_or_else(|| KernelError::Dimension("binary op needs two inputs".into()))?;
            if a.shape() != b.shape() {
                return Err(KernelError::Dimension(format!(
                    "elementwise {kind:?}: shapes {:?} and {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
            let ys = b.as_f32()?;
            if kind == Elementwise::Add {
                xs.iter().zip(ys).map(|(x, y)| x + y).collect()
            } else {
                xs.iter().zip(ys).map(|(x, y)| x * y).collect()
            }
        }
    };
    Ok(Tensor::from_f32(format!("{kind:?}").to_lowercase(), a.shape(), out)?)
}

pub fn scale(x: &Tensor, factor: f32) -> Result<Tensor, KernelError> {
    let out = x.as_f32()?.iter().map(|v| v * factor).collect();
    Ok(Tensor::from_f32("scale", x.shape(), out)?)
}

/// Gathers table rows for `ids`, dequantizing as needed: `[n, d_model]`.
pub fn embed_lookup(table: &Tensor, ids: &[usize]) -> Result<Tensor, KernelError> {
    let (vocab, d) = as_matrix(table)?;
    let mut out = vec![0.0f32; ids.len() * d];
    for (row, &id) in out.chunks_mut(d.max(1)).zip(ids) {
        if id >= vocab {
            return Err(KernelError::TokenOutOfRange { id, vocab });
        }
        dequantize_into(table.data(), id * d, row);
    }
    Ok(Tensor::from_f32("embd", &[ids.len(), d], out)?)
}

pub(crate) fn as_matrix(t: &Tensor) -> Result<(usize, usize), KernelError> {
    match t.shape() {
        [d] => Ok((*d, 1)),
        [r, c] => Ok((*r, *c)),
        s => Err(KernelError::Rank {
            name: t.name().to_string(),
            expected: 2,
            got: s.len(),
        }),
    }
}
