//! Row-interleaved copies of quantized weights.
//!
//! A pack holds groups of [`ROW_GROUP`] rows. Within a group each 32-element
//! block stores the rows' scales as f32 followed by the codes with the row
//! index innermost, so decoding one `k` for the whole group is a contiguous
//! vector operation. Rows past the end of the tensor are padded with zero
//! scales. Decoded values are computed exactly as by `dequantize_q4`/`_q8`.

use crate::tensor::{TensorData, QK};

pub const ROW_GROUP: usize = 32;

#[derive(Debug, Clone)]
pub(crate) struct Q4Block {
    pub d: [f32; ROW_GROUP],
    /// `qs[j][r]` is byte `j` of row `r`'s block.
    pub qs: [[u8; ROW_GROUP]; QK / 2],
}

#[derive(Debug, Clone)]
pub(crate) struct Q8Block {
    pub d: [f32; ROW_GROUP],
    pub qs: [[i8; ROW_GROUP]; QK],
}

#[derive(Debug, Clone)]
pub(crate) enum Packed {
    Q4 { blocks: Vec<Q4Block>, per_row: usize },
    Q8 { blocks: Vec<Q8Block>, per_row: usize },
}

impl Packed {
    /// Packs a quantized `[rows, d_in]` matrix; `None` for float dtypes.
    pub fn build(data: &TensorData, rows: usize, d_in: usize) -> Option<Packed> {
        let per_row = d_in / QK;
        let groups = rows.div_ceil(ROW_GROUP);
        match data {
            TensorData::Q4_0(src) => {
                let empty = Q4Block {
                    d: [0.0; ROW_GROUP],
                    qs: [[8 | (8 << 4); ROW_GROUP]; QK / 2],
                };
                let mut blocks = vec![empty; groups * per_row];
                for row in 0..rows {
                    let (g, r) = (row / ROW_GROUP, row % ROW_GROUP);
                    for b in 0..per_row {
                        let s = &src[row * per_row + b];
                        let dst = &mut blocks[g * per_row + b];
                        dst.d[r] = s.scale.to_f32();
                        for j in 0..QK / 2 {
                            dst.qs[j][r] = s.qs[j];
                        }
                    }
                }
                Some(Packed::Q4 { blocks, per_row })
            }
            TensorData::Q8_0(src) => {
                let empty = Q8Block {
                    d: [0.0; ROW_GROUP],
                    qs: [[0; ROW_GROUP]; QK],
                };
                let mut blocks = vec![empty; groups * per_row];
                for row in 0..rows {
                    let (g, r) = (row / ROW_GROUP, row % ROW_GROUP);
                    for b in 0..per_row {
                        let s = &src[row * per_row + b];
                        let dst = &mut blocks[g * per_row + b];
                        dst.d[r] = s.scale.to_f32();
                        for j in 0..QK {
                            dst.qs[j][r] = s.qs[j];
                        }
                    }
                }
                Some(Packed::Q8 { blocks, per_row })
            }
            TensorData::F32(_) | TensorData::F16(_) => None,
        }
    }

    /// Writes the decoded values of block `b` of group `g` as `lanes[k][r]`.
    #[inline(always)]
    pub fn decode(&self, g: usize, b: usize, lanes: &mut [[f32; ROW_GROUP]; QK]) {
        match self {
            Packed::Q4 { blocks, per_row } => {
                let blk = &blocks[g * per_row + b];
                let (lo, hi) = lanes.split_at_mut(QK / 2);
                for j in 0..QK / 2 {
                    let q = &blk.qs[j];
                    for r in 0..ROW_GROUP {
                        lo[j][r] = ((q[r] & 0x0F) as i32 - 8) as f32 * blk.d[r];
                        hi[j][r] = ((q[r] >> 4) as i32 - 8) as f32 * blk.d[r];
                    }
                }
            }
            Packed::Q8 { blocks, per_row } => {
                let blk = &blocks[g * per_row + b];
                for j in 0..QK {
                    let q = &blk.qs[j];
                    for r in 0..ROW_GROUP {
                        lanes[j][r] = q[r] as f32 * blk.d[r];
                    }
                }
            }
        }
    }
}
