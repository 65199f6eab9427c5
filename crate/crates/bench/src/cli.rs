//! Command-line surface.

use std::path::PathBuf;
use std::time::Duration;

use clap::{ArgAction, Args, Parser, Subcommand};
use llmsched::{AccelModel, BackendPolicy, DType, Preset, SchedulerKind};

use crate::sweep::{ModelSource, PromptSpec, SweepSpec};

#[derive(Debug, Parser)]
#[command(
    name = "llmsched",
    version,
    about = "Sweep schedulers, thread counts and precisions over a synthetic LLaMA-style model",
    args_conflicts_with_subcommands = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Option<Command>,
    #[command(flatten)]
    pub sweep: SweepArgs,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-cell mean and standard deviation of decode tokens/sec from a sweep CSV.
    Summarize {
        /// Sweep CSV to read.
        csv: PathBuf,
    },
    /// Write a preset's synthetic weights to a model file.
    GenModel {
        #[arg(long, default_value = "toy")]
        preset: Preset,
        #[arg(long, default_value = "f32")]
        dtype: DType,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Built-in model shape.
    #[arg(long, default_value = "toy", conflicts_with = "model")]
    pub preset: Preset,
    /// Model file written by `gen-model`; its dtype replaces `--dtype`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Schedulers: seq, graph, graph-tensor, hybrid.
    #[arg(long, value_delimiter = ',', default_value = "seq,graph,graph-tensor,hybrid")]
    pub scheduler: Vec<SchedulerKind>,
    /// Worker thread counts.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6",
          value_parser = at_least_one)]
    pub threads: Vec<usize>,
    /// Weight precisions: f32, f16, q8, q4.
    #[arg(long, value_delimiter = ',', default_value = "f16,q8,q4")]
    pub dtype: Vec<DType>,
    /// Explicit prompt token ids.
    #[arg(long, value_delimiter = ',', conflicts_with = "prompt_len")]
    pub prompt_ids: Option<Vec<u32>>,
    /// Length of a seeded synthetic prompt.
    #[arg(long, default_value_t = 7, value_parser = at_least_one)]
    pub prompt_len: usize,
    /// Tokens to decode after the prompt.
    #[arg(long, default_value_t = 121)]
    pub gen: usize,
    /// Repetitions per cell.
    #[arg(long, default_value_t = 5, value_parser = at_least_one)]
    pub runs: usize,
    /// Wall-clock limit for one run; fractions allowed.
    #[arg(long, default_value_t = 60.0, value_parser = positive)]
    pub timeout_secs: f64,
    /// Modeled accelerator launch latency per node.
    #[arg(long, default_value_t = 100.0, value_parser = non_negative)]
    pub launch_latency_us: f64,
    /// Modeled cross-backend bandwidth in GB/s.
    #[arg(long, default_value_t = 10.0, value_parser = positive)]
    pub transfer_gbps: f64,
    /// Shared host/accelerator memory, which removes transfer costs.
    #[arg(long, default_value_t = false, action = ArgAction::Set)]
    pub unified_memory: bool,
    /// Accelerator compute speed relative to the host; below 1 slows it down.
    #[arg(long, default_value_t = 1.0, value_parser = non_negative)]
    pub accel_speedup: f64,
    /// Nodes placed on the accelerator under the hybrid scheduler.
    #[arg(long, default_value = "weight-matmuls-even-layers")]
    pub accel_policy: BackendPolicy,
    /// Seed for synthetic weights and prompt.
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Result CSV.
    #[arg(long, default_value = "results.csv")]
    pub out: PathBuf,
    /// Op and matmul breakdown JSON from the first successful run.
    #[arg(long)]
    pub profile: Option<PathBuf>,
    /// Graph text dump with wavefront levels.
    #[arg(long)]
    pub dump_graph: Option<PathBuf>,
}

fn parse_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if !v.is_finite() {
        return Err(format!("{s} is not finite"));
    }
    Ok(v)
}

fn non_negative(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if v < 0.0 {
        return Err(format!("{s} is negative"));
    }
    Ok(v)
}

fn positive(s: &str) -> Result<f64, String> {
    let v = parse_f64(s)?;
    if v <= 0.0 {
        return Err(format!("{s} must be greater than 0"));
    }
    Ok(v)
}

fn at_least_one(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".to_string()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

impl SweepArgs {
    pub fn into_spec(self) -> SweepSpec {
        let source = match self.model {
            Some(path) => ModelSource::File(path),
            None => ModelSource::Preset(self.preset),
        };
        let prompt = match self.prompt_ids {
            Some(ids) => PromptSpec::Ids(ids),
            None => PromptSpec::Synthetic(self.prompt_len),
        };
        SweepSpec {
            source,
            schedulers: self.scheduler,
            threads: self.threads,
            dtypes: self.dtype,
            prompt,
            gen: self.gen,
            runs: self.runs,
            timeout: Duration::from_secs_f64(self.timeout_secs),
            accel: AccelModel {
                launch_latency: Duration::from_secs_f64(self.launch_latency_us * 1e-6),
                transfer_bandwidth: self.transfer_gbps * 1e9,
                unified_memory: self.unified_memory,
                accel_speedup: self.accel_speedup,
            },
            policy: self.accel_policy,
            seed: self.seed,
            out: self.out,
            profile: self.profile,
            dump_graph: self.dump_graph,
        }
    }
}
