//! `ergomax`: experiment runner for the damped stochastic Maxwell solvers.
//!
//! ```text
//! ergomax <STUDY> --config PATH [--out DIR] [--threads N] [--seed S]
//! ```
//!
//! Exit status: 0 success, 1 numerical or i/o failure, 2 config or usage
//! error, 3 the study ran but its check failed. Every failure writes a
//! `report.json` failure record when the output directory is known and
//! prints the same record to stderr.

mod artifacts;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use serde_json::json;

use crate::config::{ConfigError, Study};
use crate::run::RunError;

#[derive(Debug, Parser)]
#[command(name = "ergomax", version, about = "Structure-preserving stochastic Maxwell experiments")]
struct Cli {
    /// Study to run.
    #[arg(value_enum)]
    study: Study,
    /// Experiment config (TOML, or JSON when the extension is `.json`).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory; overrides `output.dir`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads for the trajectory pool.
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
    /// Seed base; overrides `monte_carlo.seed_base`.
    #[arg(long, value_name = "S")]
    seed: Option<u64>,
}

const DEFAULT_OUT: &str = "ergomax-out";

struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Config(c) => c.into(),
            RunError::Numeric(n) => Failure {
                code: 1,
                kind: "numerical",
                message: n.to_string(),
            },
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure {
            code: 2,
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

fn configure_threads(threads: Option<usize>) -> Result<usize, Failure> {
    let usage = |message: String| Failure {
        code: 2,
        kind: "usage",
        message,
    };
    match threads {
        Some(0) => Err(usage("--threads must be positive".into())),
        #[cfg(feature = "parallel")]
        Some(n) => {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| usage(format!("cannot start thread pool: {e}")))?;
            Ok(n)
        }
        #[cfg(feature = "parallel")]
        None => Ok(rayon::current_num_threads()),
        #[cfg(not(feature = "parallel"))]
        _ => Ok(1),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut out = cli.out.clone();
    let result = execute(&cli, &mut out);
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            let record = json!({
                "status": "error",
                "study": cli.study.name(),
                "kind": f.kind,
                "message": f.message,
                "exit_code": f.code,
            });
            eprintln!("{record}");
            if let Some(dir) = out {
                let _ = artifacts::write_json(&dir, "report.json", &record);
            }
            ExitCode::from(f.code)
        }
    }
}

fn execute(cli: &Cli, out: &mut Option<PathBuf>) -> Result<u8, Failure> {
    let loaded = config::load(&cli.config)?;
    let cfg = &loaded.config;
    let dir = out
        .get_or_insert_with(|| cfg.output.dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)))
        .clone();
    let threads = configure_threads(cli.threads)?;
    let output = run::run(cfg, cli.study, cli.seed)?;
    let mc = cfg.monte_carlo(cli.seed);
    let manifest = artifacts::Manifest::new(&cli.config, &loaded.raw, cli.study, &mc, &output.seeds, threads);
    artifacts::write_all(&dir, &output, &manifest, cli.study).map_err(|e| Failure {
        code: 1,
        kind: "io",
        message: format!("cannot write artifacts to {}: {e}", dir.display()),
    })?;
    let code = match output.pass {
        Some(false) => 3,
        _ => 0,
    };
    let status = if code == 0 { "ok" } else { "check failed" };
    println!("{}: {status}, artifacts in {}", cli.study.name(), dir.display());
    Ok(code)
}
