//! `wpot`: reproducible runs of the weighted potential theory pipelines.
//!
//! `wpot <command> --config run.json --out DIR [--tasks N]`. Exit code 0 when
//! every internal check passes, 1 on a failed check or numerical failure, 2
//! on a configuration error. A `manifest.json` is always written to `DIR`.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Fekete,
    Tdiam,
    Zk,
    Sample,
    Bm,
    Equilibrium,
    Rate,
    LdpVerify,
}

#[derive(Parser, Debug)]
#[command(name = "wpot", version, about = "Weighted Fekete points, transfinite diameters, ensembles and large-deviation checks")]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, short)]
    config: PathBuf,
    /// Output directory (created if missing).
    #[arg(long, short, default_value = "out")]
    out: PathBuf,
    /// Worker threads; recorded in the manifest since sampled output depends on it.
    #[arg(long)]
    tasks: Option<usize>,
    /// Print check results to stderr.
    #[arg(long, short)]
    verbose: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let tasks = cli.tasks.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)).max(1);
    // Ignore the error when a pool already exists; it only happens in tests.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(tasks).build_global();
    let code = commands::run(cli.command, &cli.config, &cli.out, tasks, cli.verbose);
    ExitCode::from(code)
}
