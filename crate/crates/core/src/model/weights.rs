use std::sync::Arc;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, ModelError};
use crate::kernels::quantize_tensor;
use crate::tensor::{DType, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub attn_norm: Arc<Tensor>,
    pub wq: Arc<Tensor>,
    pub wk: Arc<Tensor>,
    pub wv: Arc<Tensor>,
    pub wo: Arc<Tensor>,
    pub ffn_norm: Arc<Tensor>,
    pub w_gate: Arc<Tensor>,
    pub w_up: Arc<Tensor>,
    pub w_down: Arc<Tensor>,
}

impl LayerWeights {
    pub fn tensors(&self) -> [&Arc<Tensor>; 9] {
        [
            &self.attn_norm,
            &self.wq,
            &self.wk,
            &self.wv,
            &self.wo,
            &self.ffn_norm,
            &self.w_gate,
            &self.w_up,
            &self.w_down,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    pub tok_embed: Arc<Tensor>,
    pub layers: Vec<LayerWeights>,
    pub final_norm_w: Arc<Tensor>,
    pub w_output: Arc<Tensor>,
}

/// Canonical tensor names and shapes, in file order.
pub(crate) fn layout(config: &ModelConfig) -> Vec<(String, Vec<usize>, bool)> {
    let (d, kv, ff) = (config.d_model, config.kv_dim(), config.d_ff);
    let mut out = vec![("tok_embed".to_string(), vec![config.vocab, d], true)];
    for l in 0..config.n_layers {
        let p = |s: &str| format!("blk.{l}.{s}");
        out.extend([
            (p("attn_norm"), vec![d], false),
            (p("wq"), vec![d, d], true),
            (p("wk"), vec![kv, d], true),
            (p("wv"), vec![kv, d], true),
            (p("wo"), vec![d, d], true),
            (p("ffn_norm"), vec![d], false),
            (p("w_gate"), vec![ff, d], true),
            (p("w_up"), vec![ff, d], true),
            (p("w_down"), vec![d, ff], true),
        ]);
    }
    out.push(("final_norm_w".to_string(), vec![d], false));
    out.push(("w_output".to_string(), vec![config.vocab, d], true));
    out
}

impl WeightSet {
    /// All tensors in canonical order.
    pub fn tensors(&self) -> Vec<&Arc<Tensor>> {
        let mut out = vec![&self.tok_embed];
        for l in &self.layers {
            out.extend(l.tensors());
        }
        out.push(&self.final_norm_w);
        out.push(&self.w_output);
        out
    }

    /// Rebuilds a set from tensors in canonical order.
    pub(crate) fn from_ordered(mut tensors: Vec<Arc<Tensor>>, n_layers: usize) -> Result<Self, ModelError> {
        let expected = 3 + 9 * n_layers;
        if tensors.len() != expected {
            return Err(ModelError::Malformed(format!(
                "expected {expected} tensors, found {}",
                tensors.len()
            )));
        }
        let w_output = tensors.pop().expect("length checked");
        let final_norm_w = tensors.pop().expect("length checked");
        let mut it = tensors.into_iter();
        let tok_embed = it.next().expect("length checked");
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let mut next = || it.next().expect("length checked");
            layers.push(LayerWeights {
                attn_norm: next(),
                wq: next(),
                wk: next(),
                wv: next(),
                wo: next(),
                ffn_norm: next(),
                w_gate: next(),
                w_up: next(),
                w_down: next(),
            });
        }
        Ok(WeightSet {
            tok_embed,
            layers,
            final_norm_w,
            w_output,
        })
    }

    /// Checks every tensor shape against `config`, and that matrices use
    /// the configured dtype.
    pub fn check(&self, config: &ModelConfig) -> Result<(), ModelError> {
        if self.layers.len() != config.n_layers {
            return Err(ModelError::LayerCount {
                expected: config.n_layers,
                got: self.layers.len(),
            });
        }
        for ((name, shape, is_matrix), t) in layout(config).iter().zip(self.tensors()) {
            if t.shape() != shape.as_slice() {
                return Err(ModelError::WeightShape {
                    name: name.clone(),
                    expected: shape.clone(),
                    got: t.shape().to_vec(),
                });
            }
            let want = if *is_matrix { config.dtype } else { DType::F32 };
            if t.dtype() != want {
                return Err(ModelError::Config(format!(
                    "weight `{name}` is {} but the config says {want}",
                    t.dtype()
                )));
            }
        }
        Ok(())
    }

    pub fn total_bytes(&self) -> usize {
        self.tensors().iter().map(|t| t.byte_len()).sum()
    }
}

/// FNV-1a, used to give every tensor its own generator stream.
fn name_stream(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Deterministic weights: each tensor draws from ChaCha8 seeded with `seed`
/// on a stream derived from the tensor name. Matrices are
/// `uniform(-1/√d_in, 1/√d_in)` then encoded as `config.dtype`; norm gains
/// are `1 + uniform(-1/√d, 1/√d)` and stay f32.
pub fn gen_synthetic_weights(config: &ModelConfig, seed: u64) -> Result<WeightSet, ModelError> {
    config.validate()?;
    let mut tensors = Vec::new();
    for (name, shape, is_matrix) in layout(config) {
        let d_in = *shape.last().expect("weights have rank >= 1");
        let bound = 1.0 / (d_in as f32).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(name_stream(&name));
        let dist = Uniform::new(-bound, bound).expect("bound is positive and finite");
        let n: usize = shape.iter().product();
        let tensor = if is_matrix {
            let values: Vec<f32> = dist.sample_iter(&mut rng).take(n).collect();
            quantize_tensor(name, &shape, &values, config.dtype)?
        } else {
            let values: Vec<f32> = dist.sample_iter(&mut rng).take(n).map(|v| 1.0 + v).collect();
            Tensor::from_f32(name, &shape, values)?
        };
        tensors.push(Arc::new(tensor));
    }
    WeightSet::from_ordered(tensors, config.n_layers)
}
