//! Report files: `report.json`, long-format CSVs, and `meta.json`.
//!
//! Everything except `meta.json` is a pure function of the resolved config.

use super::config::Config;
use crate::error::{Error, Result};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::Path;

/// A named CSV body.
#[derive(Debug, Clone, PartialEq)]
pub struct Csv {
    pub name: String,
    pub body: String,
}

impl Csv {
    pub fn new(name: &str, body: String) -> Self {
        Self { name: name.to_string(), body }
    }
}

#[derive(Serialize)]
struct Envelope<'a, R: Serialize> {
    command: &'static str,
    config: BTreeMap<String, String>,
    config_hash: String,
    result: &'a R,
}

/// The `report.json` body: command, resolved config, its hash, and the result.
pub fn report_json<R: Serialize>(cfg: &Config, result: &R) -> Result<String> {
    let env = Envelope { command: cfg.command.name(), config: cfg.resolved(), config_hash: cfg.content_hash(), result };
    serde_json::to_string_pretty(&env).map(|s| s + "\n").map_err(|e| Error::Io(e.to_string()))
}

#[derive(Serialize)]
struct Meta<'a> {
    command: &'static str,
    config_hash: String,
    version: &'static str,
    started_unix: u64,
    finished_unix: u64,
    workers: usize,
    files: Vec<&'a str>,
}

pub(crate) fn now() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

/// Writes the report, CSVs and metadata into `dir`, creating it if needed.
pub fn write_outputs<R: Serialize>(dir: &Path, cfg: &Config, result: &R, csvs: &[Csv], started_unix: u64, workers: usize) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), report_json(cfg, result)?)?;
    for c in csvs {
        std::fs::write(dir.join(&c.name), &c.body)?;
    }
    let mut files = vec!["report.json"];
    files.extend(csvs.iter().map(|c| c.name.as_str()));
    let meta = Meta {
        command: cfg.command.name(),
        config_hash: cfg.content_hash(),
        version: env!("CARGO_PKG_VERSION"),
        started_unix,
        finished_unix: now(),
        workers,
        files,
    };
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Io(e.to_string()))?;
    std::fs::write(dir.join("meta.json"), text + "\n")?;
    Ok(())
}
