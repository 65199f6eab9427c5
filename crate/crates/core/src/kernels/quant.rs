//! Block quantization codecs.
//!
//! Q4: the element of largest magnitude `m` (sign kept) fixes
//! `scale = m / -8`, so `m` itself encodes as code 0. Codes are
//! `clamp(round(v / scale), -8, 7) + 8`. Q8: `scale = max|v| / 127` with codes
//! clamped to `[-127, 127]`. Rounding is half away from zero and codes are
//! computed against the f16-rounded scale that is actually stored.

use half::f16;

use super::KernelError;
use crate::tensor::{BlockQ4_0, BlockQ8_0, DType, Tensor, TensorData, TensorError, QK};

fn check_len(values: &[f32]) -> Result<(), KernelError> {
    if values.len() != QK {
        return Err(KernelError::BlockLength(values.len()));
    }
    Ok(())
}

pub fn quantize_q4(values: &[f32]) -> Result<BlockQ4_0, KernelError> {
    check_len(values)?;
    let mut max = 0.0f32;
    let mut amax = 0.0f32;
    for &v in values {
        if v.abs() > amax {
            amax = v.abs();
            max = v;
        }
    }
    let scale = f16::from_f32(max / -8.0);
    let d = scale.to_f32();
    let mut qs = [0u8; QK / 2];
    let code = |v: f32| -> u8 {
        if d == 0.0 {
            8
        } else {
            ((v / d).round().clamp(-8.0, 7.0) as i32 + 8) as u8
        }
    };
    for j in 0..QK / 2 {
        qs[j] = code(values[j]) | (code(values[j + QK / 2]) << 4);
    }
    Ok(BlockQ4_0 { scale, qs })
}

pub fn dequantize_q4(block: &BlockQ4_0) -> [f32; QK] {
    let d = block.scale.to_f32();
    let mut out = [0.0f32; QK];
    for j in 0..QK / 2 {
        let b = block.qs[j];
        out[j] = ((b & 0x0F) as i32 - 8) as f32 * d;
        out[j + QK / 2] = ((b >> 4) as i32 - 8) as f32 * d;
    }
    out
}

pub fn quantize_q8(values: &[f32]) -> Result<BlockQ8_0, KernelError> {
    check_len(values)?;
    let amax = values.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    let scale = f16::from_f32(amax / 127.0);
    let d = scale.to_f32();
    let mut qs = [0i8; QK];
    if d != 0.0 {
        for (q, &v) in qs.iter_mut().zip(values) {
            *q = (v / d).round().clamp(-127.0, 127.0) as i8;
        }
    }
    Ok(BlockQ8_0 { scale, qs })
}

pub fn dequantize_q8(block: &BlockQ8_0) -> [f32; QK] {
    let d = block.scale.to_f32();
    let mut out = [0.0f32; QK];
    for (o, &q) in out.iter_mut().zip(&block.qs) {
        *o = q as f32 * d;
    }
    out
}

/// Encodes row-major f32 values as a tensor of the requested dtype.
pub fn quantize_tensor(
    name: impl Into<String>,
    shape: &[usize],
    values: &[f32],
    dtype: DType,
) -> Result<Tensor, KernelError> {
    let name = name.into();
    let inner = shape.last().copied().unwrap_or(1);
    if dtype.is_quantized() && inner % QK != 0 {
        return Err(TensorError::BlockMisaligned { name, inner, dtype }.into());
    }
    let data = match dtype {
        DType::F32 => TensorData::F32(values.to_vec()),
        DType::F16 => TensorData::F16(values.iter().map(|&v| f16::from_f32(v)).collect()),
        DType::Q8_0 => TensorData::Q8_0(
            values
                .chunks(QK)
                .map(quantize_q8)
                .collect::<Result<_, _>>()?,
        ),
        DType::Q4_0 => TensorData::Q4_0(
            values
                .chunks(QK)
                .map(quantize_q4)
                .collect::<Result<_, _>>()?,
        ),
    };
    Ok(Tensor::new(name, shape, data)?)
}

/// Decodes storage units `[start, start + out.len())` (element indices,
/// block aligned for quantized data) of any dtype into `out`.
pub fn dequantize_into(data: &TensorData, start: usize, out: &mut [f32]) {
    match data {
        TensorData::F32(v) => out.copy_from_slice(&v[start..start + out.len()]),
        TensorData::F16(v) => {
            use half::slice::HalfFloatSliceExt;
            v[start..start + out.len()].convert_to_f32_slice(out);
        }
        TensorData::Q8_0(blocks) => {
            for (chunk, b) in out.chunks_mut(QK).zip(&blocks[start / QK..]) {
                chunk.copy_from_slice(&dequantize_q8(b));
            }
        }
        TensorData::Q4_0(blocks) => {
            for (chunk, b) in out.chunks_mut(QK).zip(&blocks[start / QK..]) {
                chunk.copy_from_slice(&dequantize_q4(b));
            }
        }
    }
}

/// Full f32 copy of a tensor's values.
pub fn dequantize_tensor(t: &Tensor) -> Vec<f32> {
    let mut out = vec![0.0; t.numel()];
    dequantize_into(t.data(), 0, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_block_encodes_to_midpoint() {
        let b = quantize_q4(&[0.0; QK]).unwrap();
        assert_eq!(b.scale.to_f32(), 0.0);
        assert!((0..QK).all(|j| b.code(j) == 8));
        assert_eq!(dequantize_q4(&b), [0.0; QK]);
        let b8 = quantize_q8(&[0.0; QK]).unwrap();
        assert_eq!(dequantize_q8(&b8), [0.0; QK]);
    }

    #[test]
    fn negative_unit_spike() {
        let mut v = [0.0f32; QK];
        v[0] = -1.0;
        let b = quantize_q4(&v).unwrap();
        assert_eq!(b.scale.to_f32(), 0.125);
        assert_eq!(b.code(0), 0);
        assert_eq!(dequantize_q4(&b)[0], -1.0);
        assert!((1..QK).all(|j| b.code(j) == 8));
    }

    #[test]
    fn wrong_length_is_rejected() {
        assert_eq!(quantize_q4(&[0.0; 31]).unwrap_err(), KernelError::BlockLength(31));
        assert_eq!(quantize_q8(&[0.0; 33]).unwrap_err(), KernelError::BlockLength(33));
    }

    #[test]
    fn q4_decoded_values_stay_in_code_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let v: Vec<f32> = (0..QK).map(|_| rng.random_range(-4.0..4.0)).collect();
            let b = quantize_q4(&v).unwrap();
            let d = b.scale.to_f32();
            for x in dequantize_q4(&b) {
                let q = x / d;
                assert!((-8.0..=7.0).contains(&q) && q.fract() == 0.0);
            }
        }
    }

    /// Brute-force check of the reconstruction error. Values whose code was
    /// not clamped are within half a step; a value of opposite sign to the
    /// extreme element can need code +8, which clamps to 7 and costs up to a
    /// full step, plus the f16 rounding of the scale.
    #[test]
    fn q4_round_trip_error_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut saw_clamped = false;
        for _ in 0..1000 {
            let v: Vec<f32> = (0..QK).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b = quantize_q4(&v).unwrap();
            let d = b.scale.to_f32();
            let out = dequantize_q4(&b);
            for j in 0..QK {
                let err = (out[j] as f64 - v[j] as f64).abs();
                let slack = f32::EPSILON as f64 * v[j].abs() as f64;
                if b.code(j) == 15 && v[j] as f64 / d as f64 > 7.5 {
                    saw_clamped = true;
                    assert!(err <= d.abs() as f64 * (1.0 + 8.0 / 2048.0) + slack);
                } else {
                    assert!(err <= d.abs() as f64 / 2.0 + slack, "err {err} scale {d}");
                }
            }
        }
        assert!(saw_clamped);
    }

    #[test]
    fn q4_clamped_counterexample() {
        let mut v = [0.0f32; QK];
        v[0] = -1.0;
        v[1] = 1.0;
        let out = dequantize_q4(&quantize_q4(&v).unwrap());
        assert_eq!(out[0], -1.0);
        assert_eq!(out[1], 0.875);
    }

    #[test]
    fn q8_round_trip_within_half_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..1000 {
            let v: Vec<f32> = (0..QK).map(|_| rng.random_range(-3.0..3.0)).collect();
            let b = quantize_q8(&v).unwrap();
            let d = b.scale.to_f32().abs() as f64;
            for (x, y) in dequantize_q8(&b).iter().zip(&v) {
                let slack = f32::EPSILON as f64 * y.abs() as f64;
                assert!((*x as f64 - *y as f64).abs() <= d / 2.0 + slack);
            }
        }
    }

    #[test]
    fn grid_values_reconstruct_exactly() {
        // Codes on the grid of scale 0.25 (exact in f16).
        let v: Vec<f32> = (0..QK).map(|j| ((j % 16) as f32 - 8.0) * 0.25).collect();
        assert_eq!(dequantize_q4(&quantize_q4(&v).unwrap()).to_vec(), v);
        let w: Vec<f32> = (0..QK).map(|j| (j as f32 - 16.0) * 0.5).collect();
        let mut grid = w.clone();
        grid[0] = 127.0 * 0.5;
        assert_eq!(dequantize_q8(&quantize_q8(&grid).unwrap()).to_vec(), grid);
    }

    #[test]
    fn tensor_quantization_rejects_misaligned_rows() {
        let err = quantize_tensor("w", &[2, 48], &[0.0; 96], DType::Q4_0).unwrap_err();
        assert!(matches!(
            err,
            KernelError::Tensor(TensorError::BlockMisaligned { inner: 48, .. })
        ));
    }
}
