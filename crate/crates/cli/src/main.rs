//! `kplane`: batch driver for fitting, transforms and verification.
//!
//! Exit codes: 0 success, 1 a verification check failed, 2 invalid input
//! or configuration, 3 numerical failure, 4 I/O failure.

mod config;
mod ingest;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use kplane_core::Error;
use serde_json::json;

use config::{split_overrides, Mode, RunConfig, CONFIG_ENV};

#[derive(Debug, Parser)]
#[command(
    name = "kplane",
    version,
    about = "Fit and verify shallow networks with multivariate Green's-function neurons",
    after_help = "Any config value can be overridden with --<block>.<key>=<json>, e.g. --solver.lambda=0.05."
)]
struct Cli {
    /// Mode to run; falls back to `mode` in the config.
    #[arg(value_enum)]
    mode: Option<Mode>,
    /// JSON run configuration.
    #[arg(long, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Worker threads for data-parallel evaluation. Results do not depend
    /// on this value.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Numerical(_) => 3,
        Error::Io(_) => 4,
        _ => 2,
    }
}

fn fail(e: &Error) -> ExitCode {
    let envelope = json!({"error": {"code": e.code(), "message": e.to_string()}});
    eprintln!("{envelope}");
    ExitCode::from(exit_code(e))
}

fn main() -> ExitCode {
    let (args, overrides) = split_overrides(std::env::args().collect());
    let cli = Cli::parse_from(args);
    if cli.threads == 0 {
        return fail(&Error::Config("--threads must be at least 1".into()));
    }
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
        return fail(&Error::Config(format!("thread pool: {e}")));
    }
    let cfg = match RunConfig::load(cli.config.as_deref(), &overrides) {
        Ok(cfg) => cfg,
        Err(e) => return fail(&e),
    };
    let Some(mode) = cli.mode.or(cfg.mode) else {
        return fail(&Error::Config("no mode given on the command line or in the config".into()));
    };
    match run::run(&cfg, mode) {
        Ok(outcome) => {
            let paths: Vec<String> = outcome.artifacts.iter().map(|p| p.display().to_string()).collect();
            println!("{}", json!({"mode": mode, "passed": outcome.all_passed, "artifacts": paths}));
            if outcome.all_passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => fail(&e),
    }
}
