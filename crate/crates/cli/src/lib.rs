//! Benchmark harness and command-line front end for `cnnlayout`: the
//! evaluation layer fixtures, oracle-checked layer and transform
//! benchmarks, and the CSV they produce.

pub mod app;
pub mod bench;
pub mod error;
pub mod fixtures;

pub use app::{execute, Cli, Command, Output};
pub use error::CliError;
