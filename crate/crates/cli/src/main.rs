//! `heteroswarm` command-line front end.

mod commands;
mod task;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use heteroswarm::{Error, Mode};
use serde_json::json;

#[derive(Debug, Parser)]
#[command(name = "heteroswarm", version, about = "Swarm search over the structure and weights of multi-expert systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the joint search and write the best system, trace and metrics to --out.
    Optimize {
        #[command(flatten)]
        run: RunArgs,
        /// Continue from <out>/checkpoint.json.
        #[arg(long)]
        resume: bool,
        /// Load the initial expert pool from a pool directory (vector tasks only).
        #[arg(long)]
        pool: Option<PathBuf>,
    },
    /// Decode one adjacency matrix (JSON rows) into a DAG printed as JSON.
    Decode {
        matrix: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        top_p: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Execute a saved system on the task from --config and print its utility.
    Evaluate {
        /// A best_system.json written by optimize or sweep.
        system: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Task seed; defaults to the one stored with the system.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value_t = Which::Returned)]
        which: Which,
    },
    /// Collaborative-gain report from a correctness file; optionally a CSV from a trace.
    Analyze {
        input: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Repeat optimize with PSO settings drawn from the search grid.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, default_value_t = 50)]
        runs: usize,
    },
    /// Serve the echo stub that remote-mode tests talk to.
    ServeStub {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML config; absent keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Evaluation threads; defaults to the available parallelism.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Which {
    Returned,
    BestFound,
}

fn error_json(e: &Error) -> serde_json::Value {
    let mut v = json!({ "error": e.kind(), "message": e.to_string() });
    if let Error::Config { key, .. } = e {
        v["key"] = json!(key);
    }
    v
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": "usage", "message": e.to_string() }));
            return ExitCode::from(2);
        }
    };
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::FAILURE
        }
    }
}
