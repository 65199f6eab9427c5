//! Model file format, little-endian throughout:
//!
//! ```text
//! magic      8 bytes  "LLMSCHD\0"
//! version    u32      1
//! config     n_layers, d_model, n_heads, n_kv_heads, d_ff, vocab, ctx_len: u32
//!            rope_theta, norm_eps: f32; dtype: u32
//! count      u32      number of tensors
//! tensor*    name_len u32, name (utf-8), dtype u32, rank u32, dims u64 × rank,
//!            byte_len u64, data
//! ```
//!
//! Tensors appear in canonical order: `tok_embed`, then per layer
//! `attn_norm wq wk wv wo ffn_norm w_gate w_up w_down`, then
//! `final_norm_w`, `w_output`. Dtype codes: f32 = 0, f16 = 1, q4_0 = 2,
//! q8_0 = 8.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use super::weights::layout;
use super::{ModelConfig, ModelError, WeightSet};
use crate::tensor::{DType, Tensor, MAX_RANK};

pub const MAGIC: [u8; 8] = *b"LLMSCHD\0";
pub const FORMAT_VERSION: u32 = 1;

pub fn save_model(path: impl AsRef<Path>, config: &ModelConfig, weights: &WeightSet) -> Result<(), ModelError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(&mut w, config, weights)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(ModelConfig, WeightSet), ModelError> {
    read_model(&mut BufReader::new(File::open(path)?))
}

pub fn write_model<W: Write>(w: &mut W, config: &ModelConfig, weights: &WeightSet) -> Result<(), ModelError> {
    weights.check(config)?;
    w.write_all(&MAGIC)?;
    put_u32(w, FORMAT_VERSION)?;
    for v in [
        config.n_layers,
        config.d_model,
        config.n_heads,
        config.n_kv_heads,
        config.d_ff,
        config.vocab,
        config.ctx_len,
    ] {
        put_u32(w, v as u32)?;
    }
    w.write_all(&config.rope_theta.to_le_bytes())?;
    w.write_all(&config.norm_eps.to_le_bytes())?;
    put_u32(w, config.dtype.code())?;

    let tensors = weights.tensors();
    put_u32(w, tensors.len() as u32)?;
    for t in tensors {
        put_u32(w, t.name().len() as u32)?;
        w.write_all(t.name().as_bytes())?;
        put_u32(w, t.dtype().code())?;
        put_u32(w, t.shape().len() as u32)?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let bytes = t.to_bytes();
        w.write_all(&(bytes.len() as u64).to_le_bytes())?;
        w.write_all(&bytes)?;
    }
    Ok(())
}

pub fn read_model<R: Read>(r: &mut R) -> Result<(ModelConfig, WeightSet), ModelError> {
    let header = "header";
    let mut magic = [0u8; 8];
    fill(r, &mut magic, header)?;
    if magic != MAGIC {
        return Err(ModelError::BadMagic);
    }
    let version = get_u32(r, header)?;
    if version != FORMAT_VERSION {
        return Err(ModelError::Version(version));
    }
    let mut dims = [0usize; 7];
    for d in &mut dims {
        *d = get_u32(r, header)? as usize;
    }
    let rope_theta = f32::from_bits(get_u32(r, header)?);
    let norm_eps = f32::from_bits(get_u32(r, header)?);
    let dtype_code = get_u32(r, header)?;
    let dtype = DType::from_code(dtype_code)
        .ok_or_else(|| ModelError::Malformed(format!("unknown dtype code {dtype_code}")))?;
    let config = ModelConfig {
        n_layers: dims[0],
        d_model: dims[1],
        n_heads: dims[2],
        n_kv_heads: dims[3],
        d_ff: dims[4],
        vocab: dims[5],
        ctx_len: dims[6],
        rope_theta,
        norm_eps,
        dtype,
    };
    config.validate()?;

    let expected = layout(&config);
    let count = get_u32(r, header)? as usize;
    if count != expected.len() {
        return Err(ModelError::Malformed(format!(
            "{count} tensors, config implies {}",
            expected.len()
        )));
    }
    let mut tensors = Vec::with_capacity(count);
    for (i, (want_name, _, _)) in expected.iter().enumerate() {
        let ctx = format!("tensor {i} header");
        let name_len = get_u32(r, &ctx)? as usize;
        if name_len > 4096 {
            return Err(ModelError::Malformed(format!("tensor name length {name_len}")));
        }
        let mut name = vec![0u8; name_len];
        fill(r, &mut name, &ctx)?;
        let name = String::from_utf8(name).map_err(|_| ModelError::Malformed("tensor name is not utf-8".into()))?;
        if &name != want_name {
            return Err(ModelError::Malformed(format!("expected tensor `{want_name}`, found `{name}`")));
        }
        let code = get_u32(r, &name)?;
        let dtype =
            DType::from_code(code).ok_or_else(|| ModelError::Malformed(format!("`{name}`: dtype code {code}")))?;
        let rank = get_u32(r, &name)? as usize;
        if rank > MAX_RANK {
            return Err(ModelError::Malformed(format!("`{name}`: rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(get_u64(r, &name)? as usize);
        }
        let byte_len = get_u64(r, &name)? as usize;
        let numel: usize = shape.iter().product();
        if byte_len != numel / dtype.block_len() * dtype.block_bytes() {
            return Err(ModelError::Malformed(format!("`{name}`: byte length {byte_len} for shape {shape:?}")));
        }
        let mut bytes = vec![0u8; byte_len];
        fill(r, &mut bytes, &name)?;
        tensors.push(Arc::new(Tensor::from_bytes(name, &shape, dtype, &bytes)?));
    }
    let weights = WeightSet::from_ordered(tensors, config.n_layers)?;
    weights.check(&config)?;
    Ok((config, weights))
}

fn fill<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<(), ModelError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => ModelError::Truncated(what.to_string()),
        _ => ModelError::Io(e),
    })
}

fn get_u32<R: Read>(r: &mut R, what: &str) -> Result<u32, ModelError> {
    let mut b = [0u8; 4];
    fill(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn get_u64<R: Read>(r: &mut R, what: &str) -> Result<u64, ModelError> {
    let mut b = [0u8; 8];
    fill(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}
