use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use safebo_cli::{execute, parse_config, report, ConfigError};

#[derive(Parser)]
#[command(name = "safebo", version, about = "Safe Bayesian optimization experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every cell of a config and write records, summary and plot data.
    Run {
        config: PathBuf,
        /// Output directory (overrides the config's `output_dir`).
        #[arg(long, env = "SAFEBO_OUT_DIR")]
        out: Option<PathBuf>,
        /// Comma-separated seeds replacing the config's list.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Comma-separated observation counts at which GP grids are logged.
        #[arg(long, value_delimiter = ',')]
        log_iters: Option<Vec<usize>>,
    },
}

#[derive(serde::Serialize)]
struct ErrorReport {
    error: String,
    details: Vec<String>,
}

fn fail(error: &str, details: Vec<String>) -> ExitCode {
    let report = ErrorReport {
        error: error.to_string(),
        details,
    };
    eprintln!("{}", serde_json::to_string(&report).expect("error serializes"));
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let Command::Run {
        config,
        out,
        seeds,
        log_iters,
    } = Cli::parse().command;

    let mut cfg = match parse_config(&config) {
        Ok(c) => c,
        Err(e) => return config_failure(&e),
    };
    if let Some(s) = seeds {
        cfg.seeds = s;
    }
    if let Some(l) = log_iters {
        cfg.log_iters = Some(l);
    }
    let mut resolved = match cfg.resolve() {
        Ok(r) => r,
        Err(e) => return config_failure(&e),
    };
    if let Some(out) = out {
        resolved.output_dir = out;
    }

    let out_dir = resolved.output_dir.clone();
    let artifacts = match execute(&resolved, &out_dir) {
        Ok(a) => a,
        Err(e) => return fail("execution", vec![e.to_string()]),
    };
    match report(&artifacts) {
        Ok(text) => {
            print!("{text}");
            println!("output written to {}", out_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => fail("report", vec![e.to_string()]),
    }
}

fn config_failure(e: &ConfigError) -> ExitCode {
    fail("config", e.details())
}
