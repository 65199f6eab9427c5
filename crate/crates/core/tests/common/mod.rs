#![allow(dead_code)]

use llmsched::model::gen_synthetic_weights;
use llmsched::profiler::ProfileRecord;
use llmsched::runtime::{synthetic_prompt, EngineOptions, Generation};
use llmsched::{AccelModel, Engine, ModelConfig, Preset, ProfileTrace, SchedulerKind, WeightSet};

pub const SEED: u64 = 42;

pub fn toy() -> (ModelConfig, WeightSet) {
    let c = Preset::Toy.config();
    let w = gen_synthetic_weights(&c, SEED).unwrap();
    (c, w)
}

pub fn small(n_layers: usize) -> (ModelConfig, WeightSet) {
    let c = ModelConfig {
        n_layers,
        ..Preset::Toy.config()
    };
    let w = gen_synthetic_weights(&c, SEED).unwrap();
    (c, w)
}

pub fn prompt(c: &ModelConfig, len: usize) -> Vec<u32> {
    synthetic_prompt(len, c.vocab, SEED)
}

pub fn options(kind: SchedulerKind, n_threads: usize, accel: Option<AccelModel>) -> EngineOptions {
    EngineOptions {
        scheduler: kind,
        n_threads,
        accel,
        ..EngineOptions::default()
    }
}

/// Generates with profiling on and returns the run plus its trace.
pub fn profiled_run(
    c: &ModelConfig,
    w: &WeightSet,
    opts: EngineOptions,
    prompt: &[u32],
    n_gen: usize,
) -> (Generation, ProfileTrace, Engine) {
    let mut e = Engine::new(c, w, opts).unwrap();
    e.enable_profiling();
    let g = e.generate(prompt, n_gen, None).unwrap();
    let t = e.take_trace().unwrap();
    (g, t, e)
}

/// Splits a trace into per-step slices; each step records every node once.
pub fn steps(trace: &ProfileTrace, nodes: usize) -> Vec<&[ProfileRecord]> {
    assert_eq!(trace.records.len() % nodes, 0, "trace length is not a whole number of steps");
    trace.records.chunks(nodes).collect()
}

pub fn bits(v: &[f32]) -> Vec<u32> {
    v.iter().map(|x| x.to_bits()).collect()
}
