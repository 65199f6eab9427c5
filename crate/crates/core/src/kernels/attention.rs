//! Per-head attention products over cached and current keys/values with
//! grouped-query head sharing.
//!
//! Layouts: queries and current keys/values are feature-major `[heads *
//! head_dim, n]`; caches are position-major `[n_past, kv_dim]`; scores and
//! probabilities are `[n_heads, n, n_past + n]`. Query head `h` reads
//! KV head `h / (n_heads / n_kv_heads)`.

use super::ops::as_matrix;
use super::{transpose, KernelError};
use crate::tensor::Tensor;

struct Geometry {
    n: usize,
    n_past: usize,
    head_dim: usize,
    kv_dim: usize,
    group: usize,
}

fn geometry(
    q_rows: usize,
    n: usize,
    cur: &Tensor,
    cache: &Tensor,
    n_heads: usize,
    n_kv_heads: usize,
) -> Result<Geometry, KernelError> {
    if n_heads == 0 || n_kv_heads == 0 || !n_heads.is_multiple_of(n_kv_heads) || !q_rows.is_multiple_of(n_heads) {
        return Err(KernelError::Dimension(format!(
            "attention: {q_rows} rows for {n_heads} heads / {n_kv_heads} kv heads"
        )));
    }
    let head_dim = q_rows / n_heads;
    let kv_dim = head_dim * n_kv_heads;
    let (cur_rows, cur_n) = as_matrix(cur)?;
    if cur_rows != kv_dim || cur_n != n {
        return Err(KernelError::Dimension(format!(
            "attention: current kv tensor is [{cur_rows}x{cur_n}], expected [{kv_dim}x{n}]"
        )));
    }
    let n_past = match cache.shape() {
        [p, d] if *d == kv_dim => *p,
        [0] | [] if cache.numel() == 0 => 0,
        s => {
            return Err(KernelError::Dimension(format!(
                "attention: cache shape {s:?} does not have {kv_dim} columns"
            )))
        }
    };
    Ok(Geometry {
        n,
        n_past,
        head_dim,
        kv_dim,
        group: n_heads / n_kv_heads,
    })
}

/// Cached rows followed by the current columns, position-major.
fn stacked(cache: &Tensor, cur: &Tensor, g: &Geometry) -> Result<Vec<f32>, KernelError> {
    let mut all = Vec::with_capacity((g.n_past + g.n) * g.kv_dim);
    all.extend_from_slice(&cache.as_f32()?[..g.n_past * g.kv_dim]);
    all.extend(transpose(cur.as_f32()?, g.kv_dim, g.n));
    Ok(all)
}

/// `scores[h][i][t] = Σ_d q[h, d, i] · k[t, kv(h), d]`, ascending `d`.
pub fn attn_scores(
    q: &Tensor,
    k_cur: &Tensor,
    k_cache: &Tensor,
    n_heads: usize,
    n_kv_heads: usize,
) -> Result<Tensor, KernelError> {
    let (q_rows, n) = as_matrix(q)?;
    let g = geometry(q_rows, n, k_cur, k_cache, n_heads, n_kv_heads)?;
    let keys = stacked(k_cache, k_cur, &g)?;
    let qt = transpose(q.as_f32()?, q_rows, n);
    let n_kv = g.n_past + n;
    let mut out = vec![0.0f32; n_heads * n * n_kv];
    for h in 0..n_heads {
        let kv_off = (h / g.group) * g.head_dim;
        for i in 0..n {
            let qv = &qt[i * q_rows + h * g.head_dim..][..g.head_dim];
            let row = &mut out[(h * n + i) * n_kv..][..n_kv];
            for (t, s) in row.iter_mut().enumerate() {
                let kv = &keys[t * g.kv_dim + kv_off..][..g.head_dim];
                let mut acc = 0.0f32;
                for (a, b) in qv.iter().zip(kv) {
                    acc += a * b;
                }
                *s = acc;
            }
        }
    }
    Ok(Tensor::from_f32("kq", &[n_heads, n, n_kv], out)?)
}

/// `out[h, d, i] = Σ_t p[h][i][t] · v[t, kv(h), d]` over the causally
/// visible `t ≤ n_past + i`, ascending `t`.
pub fn attn_values(
    probs: &Tensor,
    v_cur: &Tensor,
    v_cache: &Tensor,
    n_heads: usize,
    n_kv_heads: usize,
) -> Result<Tensor, KernelError> {
    let (heads, n, n_kv) = match probs.shape() {
        [h, n, t] => (*h, *n, *t),
        s => {
            return Err(KernelError::Rank {
                name: probs.name().to_string(),
                expected: 3,
                got: s.len(),
            })
        }
    };
    if heads != n_heads {
        return Err(KernelError::Dimension(format!(
            "attention: probabilities for {heads} heads, expected {n_heads}"
        )));
    }
    let (kv_rows, _) = as_matrix(v_cur)?;
    let head_dim = kv_rows / n_kv_heads.max(1);
    let g = geometry(head_dim * n_heads, n, v_cur, v_cache, n_heads, n_kv_heads)?;
    if g.n_past + n != n_kv {
        return Err(KernelError::CausalShape { n_q: n, n_kv, n_past: g.n_past });
    }
    let values = stacked(v_cache, v_cur, &g)?;
    let p = probs.as_f32()?;
    let d_model = n_heads * g.head_dim;
    let mut out_t = vec![0.0f32; n * d_model];
    let mut acc = vec![0.0f32; g.head_dim];
    for h in 0..n_heads {
        let kv_off = (h / g.group) * g.head_dim;
        for i in 0..n {
            acc.iter_mut().for_each(|a| *a = 0.0);
            let prow = &p[(h * n + i) * n_kv..][..n_kv];
            for (t, &w) in prow[..=g.n_past + i].iter().enumerate() {
                let vrow = &values[t * g.kv_dim + kv_off..][..g.head_dim];
                for (a, v) in acc.iter_mut().zip(vrow) {
                    *a += w * v;
                }
            }
            out_t[i * d_model + h * g.head_dim..][..g.head_dim].copy_from_slice(&acc);
        }
    }
    Ok(Tensor::from_f32("kqv", &[d_model, n], transpose(&out_t, n, d_model))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: Vec<f32>) -> Tensor {
        Tensor::from_f32("t", shape, v).unwrap()
    }

    #[test]
    fn scores_without_cache_are_pairwise_dots() {
        // one head, head_dim 2, two tokens
        let q = t(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let k = t(&[2, 2], vec![2.0, 3.0, 5.0, 7.0]);
        let cache = t(&[0, 2], vec![]);
        let s = attn_scores(&q, &k, &cache, 1, 1).unwrap();
        assert_eq!(s.shape(), &[1, 2, 2]);
        // q0 = (1,0), q1 = (0,1); k0 = (2,5), k1 = (3,7)
        assert_eq!(s.as_f32().unwrap(), &[2.0, 3.0, 5.0, 7.0]);
    }

    #[test]
    fn grouped_heads_share_kv() {
        // two query heads share one kv head, head_dim 2, one token, one cached row
        let q = t(&[4, 1], vec![1.0, 0.0, 0.0, 1.0]);
        let k = t(&[2, 1], vec![3.0, 4.0]);
        let cache = t(&[1, 2], vec![10.0, 20.0]);
        let s = attn_scores(&q, &k, &cache, 2, 1).unwrap();
        assert_eq!(s.as_f32().unwrap(), &[10.0, 3.0, 20.0, 4.0]);
    }

    #[test]
    fn values_weight_visible_rows_only() {
        let probs = t(&[1, 2, 2], vec![1.0, 0.0, 0.25, 0.75]);
        let v = t(&[2, 2], vec![1.0, 3.0, 2.0, 4.0]);
        let cache = t(&[0, 2], vec![]);
        let out = attn_values(&probs, &v, &cache, 1, 1).unwrap();
        // token 0 sees v0 = (1,2); token 1 mixes 0.25*(1,2) + 0.75*(3,4)
        assert_eq!(out.as_f32().unwrap(), &[1.0, 2.5, 2.0, 3.5]);
    }

    #[test]
    fn mismatched_kv_width_is_rejected() {
        let q = t(&[4, 1], vec![0.0; 4]);
        let k = t(&[3, 1], vec![0.0; 3]);
        let cache = t(&[0, 2], vec![]);
        assert!(attn_scores(&q, &k, &cache, 2, 1).is_err());
    }
}
