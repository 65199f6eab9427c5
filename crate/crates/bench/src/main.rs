use std::fs::File;
use std::io;
use std::process::ExitCode;

use clap::Parser;
use llmsched::model::{gen_synthetic_weights, save_model};
use llmsched_bench::cli::{Cli, Command};
use llmsched_bench::summary::{render, summarize};
use llmsched_bench::{run_sweep, BenchError};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Some(Command::Summarize { csv }) => File::open(&csv)
            .map_err(|source| BenchError::Io { path: csv.clone(), source })
            .and_then(summarize)
            .map(|cells| print!("{}", render(&cells))),
        Some(Command::GenModel {
            preset,
            dtype,
            seed,
            out,
        }) => {
            let config = preset.config().with_dtype(dtype);
            gen_synthetic_weights(&config, seed)
                .and_then(|w| save_model(&out, &config, &w))
                .map_err(BenchError::from)
        }
        None => {
            let spec = cli.sweep.into_spec();
            run_sweep(&spec, &mut io::stderr()).map(|report| {
                let failed = report.rows.iter().filter(|r| r.status != llmsched_bench::Status::Ok).count();
                eprintln!("{} rows written to {} ({failed} not ok)", report.rows.len(), spec.out.display());
            })
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
