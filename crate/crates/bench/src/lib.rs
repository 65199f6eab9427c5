//! Benchmark driver: argument parsing, sweeps and CSV summaries.

pub mod cli;
pub mod mem;
pub mod summary;
pub mod sweep;

pub use sweep::{run_sweep, BenchError, BenchRow, Status, SweepReport, SweepSpec, CSV_HEADER};
