//! Prefill/decode loop over a built decoder graph.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::Graph;
use crate::model::{build_llama, LlamaGraph, ModelConfig, ModelError, WeightSet};
use crate::profiler::{Phase, ProfileTrace};
use crate::scheduler::{
    assign_backends, AccelModel, BackendPolicy, Executor, LeafBindings, SchedulerError, SchedulerKind,
};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("context exhausted: {needed} tokens exceed the context length {ctx_len}")]
    ContextExhausted { needed: usize, ctx_len: usize },
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("prefill needs an empty cache, {0} positions are stored")]
    CacheNotEmpty(usize),
    #[error("deadline passed after {completed} of {planned} steps")]
    Timeout { completed: usize, planned: usize },
    #[error("graph output {0} missing")]
    MissingOutput(&'static str),
}

/// Keys and values of every processed position, one row per position.
#[derive(Debug, Clone)]
pub struct KvCache {
    k: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    kv_dim: usize,
    capacity: usize,
    n_past: usize,
}

impl KvCache {
    pub fn new(n_layers: usize, kv_dim: usize, capacity: usize) -> Self {
        KvCache {
            k: (0..n_layers).map(|_| Vec::with_capacity(capacity * kv_dim)).collect(),
            v: (0..n_layers).map(|_| Vec::with_capacity(capacity * kv_dim)).collect(),
            kv_dim,
            capacity,
            n_past: 0,
        }
    }

    pub fn n_past(&self) -> usize {
        self.n_past
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn clear(&mut self) {
        self.k.iter_mut().chain(self.v.iter_mut()).for_each(Vec::clear);
        self.n_past = 0;
    }

    /// Cached keys of `layer` as `[n_past, kv_dim]`.
    pub fn keys(&self, layer: usize) -> &[f32] {
        &self.k[layer]
    }

    pub fn values(&self, layer: usize) -> &[f32] {
        &self.v[layer]
    }

    fn leaf(&self, data: &[f32], name: String) -> Result<Tensor, TensorError> {
        Tensor::from_f32(name, &[self.n_past, self.kv_dim], data.to_vec())
    }

    /// Appends `n` positions given feature-major as `[kv_dim, n]` per layer.
    fn append(&mut self, k_new: &[&[f32]], v_new: &[&[f32]], n: usize) {
        for (dst, src) in self.k.iter_mut().zip(k_new).chain(self.v.iter_mut().zip(v_new)) {
            for t in 0..n {
                dst.extend((0..self.kv_dim).map(|f| src[f * n + t]));
            }
        }
        self.n_past += n;
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EngineOptions {
    pub scheduler: SchedulerKind,
    pub n_threads: usize,
    pub accel: Option<AccelModel>,
    /// Backend labels used under the hybrid scheduler.
    pub policy: BackendPolicy,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions {
            scheduler: SchedulerKind::Sequential,
            n_threads: 1,
            accel: None,
            policy: BackendPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GenMetrics {
    pub prompt_tokens: usize,
    pub generated_tokens: usize,
    pub prefill_seconds: f64,
    pub decode_seconds: f64,
    pub prefill_tps: f64,
    /// Zero when nothing was decoded.
    pub decode_tps: f64,
}

#[derive(Debug, Clone)]
pub struct Generation {
    /// Every token fed to the model: the prompt, then the sampled ones.
    pub tokens: Vec<u32>,
    /// Logits after the last step.
    pub logits: Vec<f32>,
    pub metrics: GenMetrics,
}

/// Deterministic pseudo-random prompt of `len` ids below `vocab`.
pub fn synthetic_prompt(len: usize, vocab: usize, seed: u64) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(0..vocab as u32)).collect()
}

/// Index of the largest logit; ties go to the lowest id.
pub fn greedy_sample(logits: &[f32]) -> u32 {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best as u32
}

#[derive(Debug)]
pub struct Engine {
    model: LlamaGraph,
    executor: Executor,
    cache: KvCache,
    trace: Option<ProfileTrace>,
}

impl Engine {
    pub fn new(config: &ModelConfig, weights: &WeightSet, options: EngineOptions) -> Result<Self, RuntimeError> {
        let mut model = build_llama(config, weights)?;
        if options.scheduler == SchedulerKind::Hybrid {
            model.graph = assign_backends(&model.graph, options.policy);
        }
        let accel = match options.scheduler {
            SchedulerKind::Hybrid => Some(options.accel.unwrap_or_default()),
            _ => options.accel,
        };
        let executor = Executor::new(options.scheduler, options.n_threads, accel)?;
        let cache = KvCache::new(config.n_layers, config.kv_dim(), config.ctx_len);
        Ok(Engine {
            model,
            executor,
            cache,
            trace: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.model.config
    }

    pub fn graph(&self) -> &Graph {
        &self.model.graph
    }

    pub fn cache(&self) -> &KvCache {
        &self.cache
    }

    pub fn n_past(&self) -> usize {
        self.cache.n_past()
    }

    /// Starts collecting profile records from subsequent steps.
    pub fn enable_profiling(&mut self) {
        self.trace = Some(ProfileTrace::default());
    }

    pub fn take_trace(&mut self) -> Option<ProfileTrace> {
        self.trace.take()
    }

    pub fn reset(&mut self) {
        self.cache.clear();
    }

    /// Runs the whole prompt as one step and returns the logits of its last
    /// position.
    pub fn prefill(&mut self, prompt: &[u32]) -> Result<Vec<f32>, RuntimeError> {
        if prompt.is_empty() {
            return Err(RuntimeError::EmptyPrompt);
        }
        if self.cache.n_past() > 0 {
            return Err(RuntimeError::CacheNotEmpty(self.cache.n_past()));
        }
        self.step(prompt, Phase::Prefill)
    }

    pub fn decode_step(&mut self, token: u32) -> Result<Vec<f32>, RuntimeError> {
        self.step(&[token], Phase::Decode)
    }

    fn step(&mut self, tokens: &[u32], phase: Phase) -> Result<Vec<f32>, RuntimeError> {
        let n = tokens.len();
        let n_past = self.cache.n_past();
        let ctx_len = self.model.config.ctx_len;
        if n_past + n > ctx_len {
            return Err(RuntimeError::ContextExhausted {
                needed: n_past + n,
                ctx_len,
            });
        }
        let m = &self.model;
        let mut b = LeafBindings::new();
        b.bind(m.tokens, Tensor::from_f32("tokens", &[n], tokens.iter().map(|&t| t as f32).collect())?);
        b.bind(
            m.positions,
            Tensor::from_f32("positions", &[n], (n_past..n_past + n).map(|p| p as f32).collect())?,
        );
        for l in 0..m.config.n_layers {
            b.bind(m.k_cache[l], self.cache.leaf(self.cache.keys(l), format!("k_cache.{l}"))?);
            b.bind(m.v_cache[l], self.cache.leaf(self.cache.values(l), format!("v_cache.{l}"))?);
        }

        let report = self.executor.run(&m.graph, &b, phase)?;
        let get = |id, what| -> Result<&Arc<Tensor>, RuntimeError> {
            report.output(id).ok_or(RuntimeError::MissingOutput(what))
        };
        let mut k_new = Vec::with_capacity(m.k_new.len());
        let mut v_new = Vec::with_capacity(m.v_new.len());
        for (&k, &v) in m.k_new.iter().zip(&m.v_new) {
            k_new.push(get(k, "Krope")?.as_f32()?);
            v_new.push(get(v, "Vcur")?.as_f32()?);
        }
        let logits = get(m.logits, "final_out")?.as_f32()?;
        let vocab = m.config.vocab;
        let last: Vec<f32> = (0..vocab).map(|r| logits[r * n + n - 1]).collect();
        self.cache.append(&k_new, &v_new, n);
        if let Some(trace) = &mut self.trace {
            trace.extend(&report.trace);
        }
        Ok(last)
    }

    /// Clears the cache, prefills `prompt` and then decodes `n_gen` greedily
    /// sampled tokens. Past `deadline` the run stops with
    /// [`RuntimeError::Timeout`].
    pub fn generate(&mut self, prompt: &[u32], n_gen: usize, deadline: Option<Instant>) -> Result<Generation, RuntimeError> {
        self.reset();
        let planned = 1 + n_gen;
        let needed = prompt.len() + n_gen;
        if needed > self.model.config.ctx_len {
            return Err(RuntimeError::ContextExhausted {
                needed,
                ctx_len: self.model.config.ctx_len,
            });
        }
        let expired = |completed| match deadline {
            Some(d) if Instant::now() >= d => Err(RuntimeError::Timeout { completed, planned }),
            _ => Ok(()),
        };

        let t0 = Instant::now();
        let mut logits = self.prefill(prompt)?;
        let prefill_time = t0.elapsed();
        let mut tokens = prompt.to_vec();

        let t1 = Instant::now();
        for i in 0..n_gen {
            expired(1 + i)?;
            let next = greedy_sample(&logits);
            tokens.push(next);
            logits = self.decode_step(next)?;
        }
        let decode_time = t1.elapsed();

        let rate = |count: usize, secs: f64| if count == 0 || secs <= 0.0 { 0.0 } else { count as f64 / secs };
        let (prefill_seconds, decode_seconds) = (prefill_time.as_secs_f64(), decode_time.as_secs_f64());
        Ok(Generation {
            tokens,
            logits,
            metrics: GenMetrics {
                prompt_tokens: prompt.len(),
                generated_tokens: n_gen,
                prefill_seconds,
                decode_seconds,
                prefill_tps: rate(prompt.len(), prefill_seconds),
                decode_tps: rate(n_gen, decode_seconds),
            },
        })
    }
}
