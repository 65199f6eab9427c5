//! Cartesian sweeps over scheduler × threads × dtype with repeated runs.

use std::fmt;
use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use llmsched::model::{build_llama, gen_synthetic_weights, load_model};
use llmsched::runtime::{synthetic_prompt, EngineOptions, RuntimeError};
use llmsched::{AccelModel, BackendPolicy, DType, Engine, ModelConfig, ModelError, Preset, SchedulerKind, WeightSet};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mem;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("cannot load model {}: {source}", path.display())]
    Load { path: PathBuf, source: ModelError },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid prompt: {0}")]
    Prompt(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Graph(#[from] llmsched::GraphError),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> BenchError + '_ {
    move |source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSource {
    Preset(Preset),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PromptSpec {
    Ids(Vec<u32>),
    Synthetic(usize),
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub source: ModelSource,
    pub schedulers: Vec<SchedulerKind>,
    pub threads: Vec<usize>,
    pub dtypes: Vec<DType>,
    pub prompt: PromptSpec,
    pub gen: usize,
    pub runs: usize,
    /// Wall-clock limit for each run.
    pub timeout: Duration,
    pub accel: AccelModel,
    pub policy: BackendPolicy,
    pub seed: u64,
    pub out: PathBuf,
    pub profile: Option<PathBuf>,
    pub dump_graph: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Timeout,
    Oom,
    Error,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Ok => "ok",
            Status::Timeout => "timeout",
            Status::Oom => "oom",
            Status::Error => "error",
        })
    }
}

/// One CSV row. Throughputs are empty unless the run finished.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub preset: String,
    pub scheduler: String,
    pub threads: usize,
    pub dtype: String,
    pub run: usize,
    pub prefill_tps: Option<f64>,
    pub decode_tps: Option<f64>,
    pub peak_rss_bytes: Option<u64>,
    pub status: Status,
}

pub const CSV_HEADER: &str = "preset,scheduler,threads,dtype,run,prefill_tps,decode_tps,peak_rss_bytes,status";

/// Outcome of one (scheduler, threads, dtype) cell.
#[derive(Debug, Clone)]
pub struct CellResult {
    pub scheduler: SchedulerKind,
    pub threads: usize,
    pub dtype: DType,
    /// Tokens of the first finished run.
    pub tokens: Option<Vec<u32>>,
    /// Error text of failed runs, in run order.
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct SweepReport {
    pub rows: Vec<BenchRow>,
    pub cells: Vec<CellResult>,
}

struct Model {
    label: String,
    config: ModelConfig,
    /// Present for model files, whose dtype is fixed.
    weights: Option<WeightSet>,
}

fn resolve(spec: &SweepSpec) -> Result<(Model, Vec<DType>), BenchError> {
    match &spec.source {
        ModelSource::Preset(p) => Ok((
            Model {
                label: p.name().to_string(),
                config: p.config(),
                weights: None,
            },
            spec.dtypes.clone(),
        )),
        ModelSource::File(path) => {
            let (config, weights) = load_model(path).map_err(|source| BenchError::Load {
                path: path.clone(),
                source,
            })?;
            let label = path.file_stem().map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned());
            let dtype = config.dtype;
            Ok((
                Model {
                    label,
                    config,
                    weights: Some(weights),
                },
                vec![dtype],
            ))
        }
    }
}

fn prompt_ids(spec: &SweepSpec, config: &ModelConfig) -> Result<Vec<u32>, BenchError> {
    let ids = match &spec.prompt {
        PromptSpec::Ids(ids) => ids.clone(),
        PromptSpec::Synthetic(n) => synthetic_prompt(*n, config.vocab, spec.seed),
    };
    if ids.is_empty() {
        return Err(BenchError::Prompt("no prompt tokens".into()));
    }
    if let Some(&bad) = ids.iter().find(|&&t| t as usize >= config.vocab) {
        return Err(BenchError::Prompt(format!("token {bad} is outside the vocabulary of {}", config.vocab)));
    }
    if ids.len() + spec.gen > config.ctx_len {
        return Err(BenchError::Prompt(format!(
            "{} prompt tokens plus {} generated exceed the context of {}",
            ids.len(),
            spec.gen,
            config.ctx_len
        )));
    }
    Ok(ids)
}

/// Bytes needed to hold the weights, including the kernel's packed copy of
/// quantized matrices.
fn weight_footprint(config: &ModelConfig) -> u64 {
    let params = (config.vocab * config.d_model * 2
        + config.n_layers
            * (2 * config.d_model * config.d_model
                + 2 * config.kv_dim() * config.d_model
                + 3 * config.d_ff * config.d_model)) as f64;
    let per_weight = config.dtype.bits_per_weight() / 8.0;
    let packed = if config.dtype.is_quantized() { 2.2 } else { 1.0 };
    (params * per_weight * packed) as u64
}

/// Runs every cell, writing rows to `spec.out` as they complete. Progress
/// lines go to `log`.
pub fn run_sweep(spec: &SweepSpec, log: &mut dyn Write) -> Result<SweepReport, BenchError> {
    let (model, dtypes) = resolve(spec)?;
    let prompt = prompt_ids(spec, &model.config)?;

    let file = File::create(&spec.out).map_err(io_err(&spec.out))?;
    let mut csv = csv::Writer::from_writer(file);
    let mut report = SweepReport::default();
    let mut profile_pending = spec.profile.is_some();
    let mut graph_pending = spec.dump_graph.is_some();

    for &dtype in &dtypes {
        let config = model.config.with_dtype(dtype);
        let weights = match &model.weights {
            Some(w) => Some(w.clone()),
            None => match mem::available_bytes() {
                Some(avail) if weight_footprint(&config) > avail => None,
                _ => Some(gen_synthetic_weights(&config, spec.seed)?),
            },
        };

        if let (true, Some(w), Some(path)) = (graph_pending, &weights, &spec.dump_graph) {
            let dump = build_llama(&config, w)?.graph.debug_dump()?;
            std::fs::write(path, dump).map_err(io_err(path))?;
            graph_pending = false;
        }

        for &kind in &spec.schedulers {
            for &threads in &spec.threads {
                let mut cell = CellResult {
                    scheduler: kind,
                    threads,
                    dtype,
                    tokens: None,
                    errors: Vec::new(),
                };
                let engine = weights.as_ref().map(|w| {
                    Engine::new(
                        &config,
                        w,
                        EngineOptions {
                            scheduler: kind,
                            n_threads: threads,
                            accel: Some(spec.accel),
                            policy: spec.policy,
                        },
                    )
                });
                let mut engine = match engine {
                    Some(Ok(e)) => Some(e),
                    Some(Err(e)) => {
                        cell.errors.push(e.to_string());
                        None
                    }
                    None => {
                        cell.errors.push("weights do not fit in available memory".into());
                        None
                    }
                };

                for run in 0..spec.runs {
                    let mut row = BenchRow {
                        preset: model.label.clone(),
                        scheduler: kind.name().to_string(),
                        threads,
                        dtype: dtype.short_name().to_string(),
                        run,
                        prefill_tps: None,
                        decode_tps: None,
                        peak_rss_bytes: None,
                        status: if weights.is_none() { Status::Oom } else { Status::Error },
                    };
                    if let Some(e) = engine.as_mut() {
                        if profile_pending {
                            e.enable_profiling();
                        }
                        mem::reset_peak();
                        let deadline = Instant::now() + spec.timeout;
                        match e.generate(&prompt, spec.gen, Some(deadline)) {
                            Ok(g) => {
                                row.status = Status::Ok;
                                row.prefill_tps = Some(g.metrics.prefill_tps);
                                row.decode_tps = (spec.gen > 0).then_some(g.metrics.decode_tps);
                                cell.tokens.get_or_insert(g.tokens);
                                if let (true, Some(trace), Some(path)) =
                                    (profile_pending, e.take_trace(), &spec.profile)
                                {
                                    let doc = serde_json::to_string_pretty(&trace.profile_document())?;
                                    std::fs::write(path, doc).map_err(io_err(path))?;
                                    profile_pending = false;
                                }
                            }
                            Err(err) => {
                                row.status = match err {
                                    RuntimeError::Timeout { .. } => Status::Timeout,
                                    _ => Status::Error,
                                };
                                cell.errors.push(err.to_string());
                                e.take_trace();
                            }
                        }
                        row.peak_rss_bytes = mem::peak_rss_bytes();
                    }
                    csv.serialize(&row)?;
                    csv.flush().map_err(io_err(&spec.out))?;
                    let _ = writeln!(
                        log,
                        "{} {} x{} {} run {}: {}{}",
                        row.preset,
                        row.scheduler,
                        threads,
                        row.dtype,
                        run,
                        row.status,
                        row.decode_tps.map_or(String::new(), |t| format!(", decode {t:.2} tk/s"))
                    );
                    report.rows.push(row);
                }
                report.cells.push(cell);
            }
        }
    }
    csv.flush().map_err(io_err(&spec.out))?;
    Ok(report)
}
