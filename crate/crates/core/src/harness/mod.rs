//! Configuration, seeded experiment orchestration, and result files for the
//! `mfglab` command line.

pub mod chaos;
pub mod checks;
pub mod config;
pub mod games;
pub mod output;

pub use config::{Command, Config, PolicySpec};
pub use output::Csv;

use crate::error::{Error, Result};
use std::path::Path;

/// Runs `cfg` on a pool of `workers` threads (0: one per core) and writes
/// the outputs into `out`.
pub fn run_to_dir(cfg: &Config, out: &Path, workers: usize) -> Result<()> {
    let started = output::now();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| Error::Argument(e.to_string()))?;
    let effective = pool.current_num_threads();
    pool.install(|| match cfg.command {
        Command::Chaos => chaos::run_chaos(cfg).and_then(|(r, c)| output::write_outputs(out, cfg, &r, &c, started, effective)),
        Command::TaggedChaos => chaos::run_tagged_chaos(cfg).and_then(|(r, c)| output::write_outputs(out, cfg, &r, &c, started, effective)),
        Command::GeneratorCheck => checks::run_generator_check(cfg).and_then(|(r, c)| output::write_outputs(out, cfg, &r, &c, started, effective)),
        Command::Sensitivity => checks::run_sensitivity(cfg).and_then(|(r, c)| output::write_outputs(out, cfg, &r, &c, started, effective)),
        Command::SpdeSolve => checks::run_spde_solve(cfg).and_then(|(r, c)| output::write_outputs(out, cfg, &r, &c, started, effective)),
        Command::MfgFixedPoint => games::run_mfg(cfg).and_then(|(r, c)| output::write_outputs(out, cfg, &r, &c, started, effective)),
        Command::Nash => games::run_nash(cfg).and_then(|(r, c)| output::write_outputs(out, cfg, &r, &c, started, effective)),
    })
}
