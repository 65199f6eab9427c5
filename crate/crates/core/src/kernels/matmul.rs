//! `out[i][j] = Σ_k W[i][k] · X[k][j]` with every output accumulated in f32,
//! one product at a time, in ascending `k`.
//!
//! The order is what makes results bit-identical across schedulers, so the
//! kernel only vectorizes across independent outputs: eight weight rows are
//! decoded per 32-element chunk, transposed so each `k` holds eight lanes, and
//! every lane keeps its own running sum. Row ranges let a caller split one
//! product across workers without changing any sum.

use std::ops::Range;

use super::pack::{Packed, ROW_GROUP};
use super::quant::dequantize_into;
use super::KernelError;
use crate::tensor::{Tensor, QK};

const LANES: usize = 8;

fn check_shapes(w: &Tensor, x: &Tensor) -> Result<(usize, usize, usize), KernelError> {
    if w.shape().len() != 2 {
        return Err(KernelError::Rank {
            name: w.name().to_string(),
            expected: 2,
            got: w.shape().len(),
        });
    }
    let (r_out, d_in) = (w.shape()[0], w.shape()[1]);
    let (x_rows, n_cols) = match x.shape() {
        [d] => (*d, 1),
        [d, n] => (*d, *n),
        other => {
            return Err(KernelError::Rank {
                name: x.name().to_string(),
                expected: 2,
                got: other.len(),
            })
        }
    };
    if x_rows != d_in {
        return Err(KernelError::Dimension(format!(
            "matmul {} [{r_out}x{d_in}] by {} [{x_rows}x{n_cols}]: inner extents differ",
            w.name(),
            x.name()
        )));
    }
    x.as_f32()?;
    Ok((r_out, d_in, n_cols))
}

/// Full product `W · X` as an `[r_out, n_cols]` f32 tensor.
pub fn matmul(w: &Tensor, x: &Tensor) -> Result<Tensor, KernelError> {
    let (r_out, _, n_cols) = check_shapes(w, x)?;
    let out = matmul_rows(w, x, 0..r_out)?;
    Ok(Tensor::from_f32(format!("{}*{}", w.name(), x.name()), &[r_out, n_cols], out)?)
}

/// Output rows `rows` of `W · X`, row-major `[rows.len(), n_cols]`.
pub fn matmul_rows(w: &Tensor, x: &Tensor, rows: Range<usize>) -> Result<Vec<f32>, KernelError> {
    let (r_out, d_in, n_cols) = check_shapes(w, x)?;
    if rows.start > rows.end || rows.end > r_out {
        return Err(KernelError::Dimension(format!(
            "row range {rows:?} outside 0..{r_out}"
        )));
    }
    let xt = transpose(x.as_f32()?, d_in, n_cols);
    let mut out = vec![0.0f32; rows.len() * n_cols];
    gemm_rows(w, &xt, d_in, n_cols, rows, &mut out);
    Ok(out)
}

/// `[rows, cols]` row-major into `[cols, rows]` row-major.
pub(crate) fn transpose(x: &[f32], rows: usize, cols: usize) -> Vec<f32> {
    if cols == 1 || rows == 1 {
        return x.to_vec();
    }
    let mut t = vec![0.0f32; x.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = x[r * cols + c];
        }
    }
    t
}

fn gemm_rows(w: &Tensor, xt: &[f32], d_in: usize, n_cols: usize, rows: Range<usize>, out: &mut [f32]) {
    if let Some(p) = w.packed() {
        return gemm_packed(p, xt, d_in, n_cols, rows, out);
    }
    let data = w.data();
    let mut tmp = [[0.0f32; QK]; LANES];
    let mut lanes = [[0.0f32; LANES]; QK];
    let mut acc = vec![[0.0f32; LANES]; n_cols];

    let full_groups = rows.len() / LANES;
    for g in 0..full_groups {
        let row0 = rows.start + g * LANES;
        acc.iter_mut().for_each(|a| *a = [0.0; LANES]);
        let mut kb = 0;
        while kb < d_in {
            let len = QK.min(d_in - kb);
            for (r, t) in tmp.iter_mut().enumerate() {
                dequantize_into(data, (row0 + r) * d_in + kb, &mut t[..len]);
            }
            transpose_chunk(&tmp, &mut lanes);
            for (j, a) in acc.iter_mut().enumerate() {
                let xs = &xt[j * d_in + kb..j * d_in + kb + len];
                accumulate_lanes(a, &lanes[..len], xs);
            }
            kb += len;
        }
        let base = (row0 - rows.start) * n_cols;
        for (j, a) in acc.iter().enumerate() {
            for (r, &v) in a.iter().enumerate() {
                out[base + r * n_cols + j] = v;
            }
        }
    }

    let row_acc = &mut vec![0.0f32; n_cols];
    for row in rows.start + full_groups * LANES..rows.end {
        row_acc.iter_mut().for_each(|a| *a = 0.0);
        let t = &mut tmp[0];
        let mut kb = 0;
        while kb < d_in {
            let len = QK.min(d_in - kb);
            dequantize_into(data, row * d_in + kb, &mut t[..len]);
            for (j, a) in row_acc.iter_mut().enumerate() {
                let xs = &xt[j * d_in + kb..j * d_in + kb + len];
                for (wv, xv) in t[..len].iter().zip(xs) {
                    *a += wv * xv;
                }
            }
            kb += len;
        }
        let base = (row - rows.start) * n_cols;
        out[base..base + n_cols].copy_from_slice(row_acc);
    }
}

/// Quantized weights: whole row groups are computed and only the requested
/// rows are written out.
fn gemm_packed(p: &Packed, xt: &[f32], d_in: usize, n_cols: usize, rows: Range<usize>, out: &mut [f32]) {
    let mut lanes = [[0.0f32; ROW_GROUP]; QK];
    let mut acc = vec![[0.0f32; ROW_GROUP]; n_cols];
    for g in rows.start / ROW_GROUP..rows.end.div_ceil(ROW_GROUP) {
        acc.iter_mut().for_each(|a| *a = [0.0; ROW_GROUP]);
        for b in 0..d_in / QK {
            p.decode(g, b, &mut lanes);
            let kb = b * QK;
            for (j, a) in acc.iter_mut().enumerate() {
                accumulate_lanes(a, &lanes, &xt[j * d_in + kb..j * d_in + kb + QK]);
            }
        }
        for r in 0..ROW_GROUP {
            let row = g * ROW_GROUP + r;
            if rows.contains(&row) {
                let base = (row - rows.start) * n_cols;
                for (j, a) in acc.iter().enumerate() {
                    out[base + j] = a[r];
                }
            }
        }
    }
}

#[inline(always)]
fn transpose_chunk(tmp: &[[f32; QK]; LANES], lanes: &mut [[f32; LANES]; QK]) {
    for k in 0..QK {
        for r in 0..LANES {
            lanes[k][r] = tmp[r][k];
        }
    }
}

#[inline(always)]
fn accumulate_lanes<const N: usize>(acc: &mut [f32; N], lanes: &[[f32; N]], xs: &[f32]) {
    let mut a = *acc;
    for (w, &xv) in lanes.iter().zip(xs) {
        for r in 0..N {
            a[r] += w[r] * xv;
        }
    }
    *acc = a;
}
