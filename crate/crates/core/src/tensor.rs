//! Shaped, typed, row-major tensors.
//!
//! Quantized storage uses 32-element blocks along the innermost extent:
//! `Q8_0` is an f16 scale plus 32 signed bytes (34 bytes, 8.5 bits/weight),
//! `Q4_0` is an f16 scale plus 32 packed nibbles (18 bytes, 4.5 bits/weight).

use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use half::f16;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::pack::Packed;

/// Elements per quantization block.
pub const QK: usize = 32;

/// Highest tensor rank accepted at construction.
pub const MAX_RANK: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("rank {0} exceeds the maximum of {MAX_RANK}")]
    RankTooHigh(usize),
    #[error("tensor `{name}`: innermost extent {inner} is not a multiple of {QK} for {dtype}")]
    BlockMisaligned {
        name: String,
        inner: usize,
        dtype: DType,
    },
    #[error("tensor `{name}`: buffer holds {got} units but shape {shape:?} needs {expected}")]
    BufferLength {
        name: String,
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("tensor `{name}` has dtype {got}, expected {expected}")]
    WrongDType {
        name: String,
        expected: DType,
        got: DType,
    },
    #[error("unknown dtype `{0}`")]
    UnknownDType(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DType {
    F32,
    F16,
    Q8_0,
    Q4_0,
}

impl DType {
    pub const ALL: [DType; 4] = [DType::F32, DType::F16, DType::Q8_0, DType::Q4_0];

    /// Elements per storage unit (1 for plain floats, 32 for blocks).
    pub fn block_len(self) -> usize {
        match self {
            DType::F32 | DType::F16 => 1,
            DType::Q8_0 | DType::Q4_0 => QK,
        }
    }

    /// Bytes per storage unit.
    pub fn block_bytes(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F16 => 2,
            DType::Q8_0 => BlockQ8_0::BYTES,
            DType::Q4_0 => BlockQ4_0::BYTES,
        }
    }

    pub fn is_quantized(self) -> bool {
        self.block_len() > 1
    }

    /// Effective storage cost per element.
    pub fn bits_per_weight(self) -> f64 {
        (self.block_bytes() * 8) as f64 / self.block_len() as f64
    }

    /// Stable numeric code used by the model file format.
    pub fn code(self) -> u32 {
        match self {
            DType::F32 => 0,
            DType::F16 => 1,
            DType::Q8_0 => 8,
            DType::Q4_0 => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<DType> {
        DType::ALL.into_iter().find(|d| d.code() == code)
    }

    /// Short lowercase name used on the command line and in CSV output.
    pub fn short_name(self) -> &'static str {
        match self {
            DType::F32 => "f32",
            DType::F16 => "f16",
            DType::Q8_0 => "q8",
            DType::Q4_0 => "q4",
        }
    }
}

impl fmt::Display for DType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for DType {
    type Err = TensorError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "f32" => Ok(DType::F32),
            "f16" => Ok(DType::F16),
            "q8" | "q8_0" => Ok(DType::Q8_0),
            "q4" | "q4_0" => Ok(DType::Q4_0),
            _ => Err(TensorError::UnknownDType(s.to_string())),
        }
    }
}

/// 4-bit block: `value = (code - 8) * scale`.
///
/// Element `j < 16` lives in the low nibble of `qs[j]`, element `j + 16` in
/// the high nibble.
#[derive(Debug, Clone, Copy, PartialEq)]
#[repr(C)]
pub struct BlockQ4_0 {
    pub scale: f16,
    pub qs: [u8; QK / 2],
}

impl BlockQ4_0 {
    pub const BYTES: usize = 2 + QK / 2;

    pub fn code(&self, j: usize) -> u8 {
        if j < QK / 2 {
            self.qs[j] & 0x0F
        } else {
            self.qs[j - QK / 2] >> 4
        }
    }

    pub fn to_bytes(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.scale.to_bits().to_le_bytes());
        out.extend_from_slice(&self.qs);
    }

    pub fn from_bytes(b: &[u8]) -> Self {
        let mut qs = [0u8; QK / 2];
        qs.copy_from_slice(&b[2..Self::BYTES]);
        BlockQ4_0 {
            scale: f16::from_bits(u16::from_le_bytes([b[0], b[1]])),
            qs,
        }
    }
}

/// 8-bit block: `value = code * scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[repr(C)]
pub struct BlockQ8_0 {
    pub scale: f16,
    pub qs: [i8; QK],
}

impl BlockQ8_0 {
    pub const BYTES: usize = 2 + QK;

    pub fn to_bytes(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.scale.to_bits().to_le_bytes());
        out.extend(self.qs.iter().map(|&q| q as u8));
    }

    pub fn from_bytes(b: &[u8]) -> Self {
        let mut qs = [0i8; QK];
        for (q, &byte) in qs.iter_mut().zip(&b[2..Self::BYTES]) {
            *q = byte as i8;
        }
        BlockQ8_0 {
            scale: f16::from_bits(u16::from_le_bytes([b[0], b[1]])),
            qs,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F16(Vec<f16>),
    Q8_0(Vec<BlockQ8_0>),
    Q4_0(Vec<BlockQ4_0>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F16(_) => DType::F16,
            TensorData::Q8_0(_) => DType::Q8_0,
            TensorData::Q4_0(_) => DType::Q4_0,
        }
    }

    /// Number of storage units (elements or blocks).
    pub fn units(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F16(v) => v.len(),
            TensorData::Q8_0(v) => v.len(),
            TensorData::Q4_0(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Tensor {
    name: String,
    shape: Vec<usize>,
    data: TensorData,
    /// Matmul-friendly copy of quantized data, built on first use.
    packed: OnceLock<Arc<Option<Packed>>>,
}

impl PartialEq for Tensor {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.shape == other.shape && self.data == other.data
    }
}

impl Tensor {
    pub fn new(
        name: impl Into<String>,
        shape: &[usize],
        data: TensorData,
    ) -> Result<Self, TensorError> {
        let name = name.into();
        if shape.len() > MAX_RANK {
            return Err(TensorError::RankTooHigh(shape.len()));
        }
        let dtype = data.dtype();
        let inner = shape.last().copied().unwrap_or(1);
        if dtype.is_quantized() && inner % QK != 0 {
            return Err(TensorError::BlockMisaligned { name, inner, dtype });
        }
        let expected = shape.iter().product::<usize>() / dtype.block_len();
        if data.units() != expected {
            return Err(TensorError::BufferLength {
                name,
                shape: shape.to_vec(),
                expected,
                got: data.units(),
            });
        }
        Ok(Tensor {
            name,
            shape: shape.to_vec(),
            data,
            packed: OnceLock::new(),
        })
    }

    pub fn from_f32(
        name: impl Into<String>,
        shape: &[usize],
        values: Vec<f32>,
    ) -> Result<Self, TensorError> {
        Tensor::new(name, shape, TensorData::F32(values))
    }

    pub fn zeros(name: impl Into<String>, shape: &[usize]) -> Result<Self, TensorError> {
        let n = shape.iter().product();
        Tensor::from_f32(name, shape, vec![0.0; n])
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    /// Innermost extent (row length).
    pub fn inner(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Product of all extents but the innermost.
    pub fn rows(&self) -> usize {
        if self.shape.is_empty() {
            1
        } else {
            self.numel() / self.inner().max(1)
        }
    }

    /// Encoded buffer size in bytes.
    pub fn byte_len(&self) -> usize {
        self.data.units() * self.dtype().block_bytes()
    }

    pub fn as_f32(&self) -> Result<&[f32], TensorError> {
        match &self.data {
            TensorData::F32(v) => Ok(v),
            other => Err(TensorError::WrongDType {
                name: self.name.clone(),
                expected: DType::F32,
                got: other.dtype(),
            }),
        }
    }

    pub fn into_f32(self) -> Result<Vec<f32>, TensorError> {
        match self.data {
            TensorData::F32(v) => Ok(v),
            other => Err(TensorError::WrongDType {
                name: self.name,
                expected: DType::F32,
                got: other.dtype(),
            }),
        }
    }

    /// Same data under a different shape with equal element count.
    pub fn reshape(self, shape: &[usize]) -> Result<Self, TensorError> {
        Tensor::new(self.name, shape, self.data)
    }

    pub(crate) fn packed(&self) -> Option<&Packed> {
        self.packed
            .get_or_init(|| Arc::new(Packed::build(&self.data, self.rows(), self.inner())))
            .as_ref()
            .as_ref()
    }

    /// Little-endian encoding of the storage buffer.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.byte_len());
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F16(v) => v
                .iter()
                .for_each(|x| out.extend_from_slice(&x.to_bits().to_le_bytes())),
            TensorData::Q8_0(v) => v.iter().for_each(|b| b.to_bytes(&mut out)),
            TensorData::Q4_0(v) => v.iter().for_each(|b| b.to_bytes(&mut out)),
        }
        out
    }

    /// Inverse of [`Tensor::to_bytes`]; `bytes` must hold exactly the encoded size.
    pub fn from_bytes(
        name: impl Into<String>,
        shape: &[usize],
        dtype: DType,
        bytes: &[u8],
    ) -> Result<Self, TensorError> {
        let name = name.into();
        let unit = dtype.block_bytes();
        if !bytes.len().is_multiple_of(unit) {
            return Err(TensorError::BufferLength {
                name,
                shape: shape.to_vec(),
                expected: shape.iter().product::<usize>() / dtype.block_len(),
                got: bytes.len() / unit,
            });
        }
        let chunks = bytes.chunks_exact(unit);
        let data = match dtype {
            DType::F32 => TensorData::F32(
                chunks
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
            DType::F16 => TensorData::F16(
                chunks
                    .map(|c| f16::from_bits(u16::from_le_bytes([c[0], c[1]])))
                    .collect(),
            ),
            DType::Q8_0 => TensorData::Q8_0(chunks.map(BlockQ8_0::from_bytes).collect()),
            DType::Q4_0 => TensorData::Q4_0(chunks.map(BlockQ4_0::from_bytes).collect()),
        };
        Tensor::new(name, shape, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_sizes_match_effective_bit_widths() {
        assert_eq!(std::mem::size_of::<BlockQ4_0>(), 18);
        assert_eq!(std::mem::size_of::<BlockQ8_0>(), 34);
        assert_eq!(DType::Q4_0.bits_per_weight(), 4.5);
        assert_eq!(DType::Q8_0.bits_per_weight(), 8.5);
        assert_eq!(DType::F16.bits_per_weight(), 16.0);
    }

    #[test]
    fn encoded_length_follows_block_count() {
        let blocks = vec![
            BlockQ4_0 {
                scale: f16::ONE,
                qs: [0x88; 16]
            };
            6
        ];
        let t = Tensor::new("w", &[3, 64], TensorData::Q4_0(blocks)).unwrap();
        assert_eq!(t.byte_len(), 6 * 18);
        assert_eq!(t.to_bytes().len(), 108);
        let back = Tensor::from_bytes("w", &[3, 64], DType::Q4_0, &t.to_bytes()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn rejects_rank_five() {
        let err = Tensor::zeros("x", &[1, 1, 1, 1, 1]).unwrap_err();
        assert_eq!(err, TensorError::RankTooHigh(5));
    }

    #[test]
    fn rejects_misaligned_quantized_rows() {
        let err = Tensor::new("w", &[2, 48], TensorData::Q8_0(vec![])).unwrap_err();
        assert!(matches!(err, TensorError::BlockMisaligned { inner: 48, .. }));
    }

    #[test]
    fn rejects_short_buffer() {
        let err = Tensor::from_f32("x", &[2, 2], vec![1.0; 3]).unwrap_err();
        assert!(matches!(err, TensorError::BufferLength { expected: 4, got: 3, .. }));
    }

    #[test]
    fn dtype_names_round_trip() {
        for d in DType::ALL {
            assert_eq!(d.short_name().parse::<DType>().unwrap(), d);
            assert_eq!(DType::from_code(d.code()), Some(d));
        }
        assert!("q3".parse::<DType>().is_err());
    }
}
