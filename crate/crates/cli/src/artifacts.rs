//! Artifact files: `stats.csv`, `orders.csv`, `report.json`, `manifest.json`.
//!
//! CSV bodies depend only on the config and seeds; the creation time lives in
//! the manifest alone.

use std::io;
use std::ops::Range;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use ergomax_core::studies::MonteCarlo;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{execution_label, Study};
use crate::run::{StudyOutput, Table};

#[derive(Debug, Serialize)]
pub struct SeedRange {
    pub start: u64,
    pub end: u64,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub cli_version: &'static str,
    pub core_version: &'static str,
    pub study: &'static str,
    pub config_path: String,
    pub config_sha256: String,
    pub seed_policy: &'static str,
    pub seed_base: u64,
    pub trajectories: usize,
    /// Half-open ranges of every seed used.
    pub seeds: Vec<SeedRange>,
    pub execution: &'static str,
    pub threads: usize,
    pub parallel_feature: bool,
    pub created_unix: u64,
}

impl Manifest {
    pub fn new(path: &Path, raw: &[u8], study: Study, mc: &MonteCarlo, seeds: &[Range<u64>], threads: usize) -> Self {
        Self {
            tool: "ergomax",
            cli_version: env!("CARGO_PKG_VERSION"),
            core_version: ergomax_core::VERSION,
            study: study.name(),
            config_path: path.display().to_string(),
            config_sha256: hex::encode(Sha256::digest(raw)),
            seed_policy: "seed_base + k",
            seed_base: mc.seed_base,
            trajectories: mc.trajectories,
            seeds: seeds
                .iter()
                .map(|r| SeedRange {
                    start: r.start,
                    end: r.end,
                })
                .collect(),
            execution: execution_label(mc.execution),
            threads,
            parallel_feature: cfg!(feature = "parallel"),
            created_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
        }
    }
}

pub fn write_csv(dir: &Path, name: &str, table: &Table) -> io::Result<()> {
    let mut w = csv::Writer::from_path(dir.join(name))?;
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.write_record(row)?;
    }
    w.flush()
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    text.push('\n');
    std::fs::write(dir.join(name), text)
}

pub fn write_all(dir: &Path, output: &StudyOutput, manifest: &Manifest, study: Study) -> io::Result<()> {
    std::fs::create_dir_all(dir)?;
    write_csv(dir, "stats.csv", &output.stats)?;
    if let Some(orders) = &output.orders {
        write_csv(dir, "orders.csv", orders)?;
    }
    let status = match output.pass {
        Some(false) => "check_failed",
        _ => "ok",
    };
    let report: Value = json!({
        "status": status,
        "study": study.name(),
        "pass": output.pass,
        "results": output.report,
    });
    write_json(dir, "report.json", &report)?;
    write_json(dir, "manifest.json", manifest)
}
