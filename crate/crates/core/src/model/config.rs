use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::tensor::DType;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub d_ff: usize,
    pub vocab: usize,
    pub ctx_len: usize,
    pub rope_theta: f32,
    pub norm_eps: f32,
    pub dtype: DType,
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Width of the K and V projections under grouped-query attention.
    pub fn kv_dim(&self) -> usize {
        self.d_model * self.n_kv_heads / self.n_heads
    }

    pub fn with_dtype(mut self, dtype: DType) -> Self {
        self.dtype = dtype;
        self
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::Config(msg));
        let dims = [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_kv_heads", self.n_kv_heads),
            ("d_ff", self.d_ff),
            ("vocab", self.vocab),
            ("ctx_len", self.ctx_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return fail(format!("{name} must be positive"));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return fail(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if !self.n_heads.is_multiple_of(self.n_kv_heads) {
            return fail(format!(
                "n_heads {} not divisible by n_kv_heads {}",
                self.n_heads, self.n_kv_heads
            ));
        }
        if !self.head_dim().is_multiple_of(2) {
            return fail(format!("head_dim {} must be even for rope", self.head_dim()));
        }
        if self.d_ff < self.d_model {
            return fail(format!(
                "d_ff {} smaller than d_model {}",
                self.d_ff, self.d_model
            ));
        }
        if !(self.rope_theta > 0.0) || !(self.norm_eps >= 0.0) {
            return fail("rope_theta must be positive and norm_eps non-negative".into());
        }
        Ok(())
    }
}

/// Shipped model shapes. Neither is a real checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    /// 4 layers, d_model 256; fast enough for exhaustive tests.
    Toy,
    /// 16 layers, d_model 2048, 32/8 heads, d_ff 8192: the proportions of a
    /// 1B LLaMA with a 4096-token vocabulary.
    OneBProportioned,
}

impl Preset {
    pub fn config(self) -> ModelConfig {
        match self {
            Preset::Toy => ModelConfig {
                n_layers: 4,
                d_model: 256,
                n_heads: 8,
                n_kv_heads: 2,
                d_ff: 1024,
                vocab: 512,
                ctx_len: 128,
                rope_theta: 10000.0,
                norm_eps: 1e-5,
                dtype: DType::F32,
            },
            Preset::OneBProportioned => ModelConfig {
                n_layers: 16,
                d_model: 2048,
                n_heads: 32,
                n_kv_heads: 8,
                d_ff: 8192,
                vocab: 4096,
                ctx_len: 128,
                rope_theta: 10000.0,
                norm_eps: 1e-5,
                dtype: DType::F16,
            },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Toy => "toy",
            Preset::OneBProportioned => "1b-proportioned",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "toy" => Ok(Preset::Toy),
            "1b-proportioned" | "1b" => Ok(Preset::OneBProportioned),
            _ => Err(ModelError::UnknownPreset(s.to_string())),
        }
    }
}
