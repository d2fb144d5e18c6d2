//! MFG fixed points and the ε-Nash experiment.

use super::config::{Command, Config};
use super::output::Csv;
use crate::error::Result;
use crate::grid::{Grid1D, GridMeasure};
use crate::mfg::{
    epsilon_nash_estimate, hjb_backward, mfg_fixed_point_deterministic, mfg_fixed_point_per_path, Deviation, FixedPointOptions,
    FixedPointResult, NashRow, NashSetup, ValueField,
};
use crate::particles::NoiseBundle;
use crate::policy::PolicyField;
use crate::spde::{solve_spde, SolveOptions};
use crate::stats::{loglog_fit, SlopeFit};
use rayon::prelude::*;
use serde::Serialize;
use std::fmt::Write as _;

/// `null`, `shift:c`, `scale:k` or `time-shift:τ`.
pub fn parse_deviation(s: &str) -> Option<Deviation> {
    if s == "null" {
        return Some(Deviation::Null);
    }
    let (name, p) = s.split_once(':')?;
    let p: f64 = p.parse().ok().filter(|x: &f64| x.is_finite())?;
    match name {
        "shift" => Some(Deviation::Shift(p)),
        "scale" => Some(Deviation::Scale(p)),
        "time-shift" if p >= 0.0 => Some(Deviation::TimeShift(p)),
        _ => None,
    }
}

fn options(cfg: &Config) -> FixedPointOptions {
    FixedPointOptions { n_iter: cfg.usize("mfg.n_iter"), damping: cfg.f64("mfg.damping"), tol: cfg.f64("mfg.tol") }
}

fn initial(cfg: &Config, grid: &Grid1D) -> GridMeasure {
    GridMeasure::gaussian(grid, cfg.f64("init.mean"), cfg.f64("init.std"))
}

#[derive(Debug, Clone, Serialize)]
pub struct PathFixedPoint {
    /// Seed of the common-noise path; absent without common noise.
    pub seed: Option<u64>,
    pub residuals: Vec<f64>,
    pub converged: bool,
    pub diverged: bool,
    pub clamped: usize,
}

impl PathFixedPoint {
    fn new(seed: Option<u64>, r: &FixedPointResult) -> Self {
        Self { seed, residuals: r.residuals.clone(), converged: r.converged, diverged: r.diverged, clamped: r.clamped }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MfgReport {
    pub common_noise: bool,
    pub note: String,
    pub paths: Vec<PathFixedPoint>,
    /// The per-path solver on W ≡ 0 reproduced the deterministic run bit for bit.
    pub zero_path_identical: Option<bool>,
    /// Largest deviation of the per-path policies from their best fit
    /// u(t, x) ≈ α(t, x) + β(t, x) m₁(μ_t) across paths.
    pub projection_residual: Option<f64>,
    /// max |u_h − u_{h/2}| on the coarse space–time nodes.
    pub refinement_change: Option<f64>,
}

fn value_csv(v: &ValueField, every: usize) -> Csv {
    let mut s = String::from("t,x,value\n");
    for (n, row) in v.values.iter().enumerate().filter(|(n, _)| n % every == 0 || *n == v.values.len() - 1) {
        for (i, val) in row.iter().enumerate() {
            let _ = writeln!(s, "{},{},{val}", n as f64 * v.dt, v.grid.x(i));
        }
    }
    Csv::new("value.csv", s)
}

fn policy_csv(p: &PolicyField, every: usize) -> Csv {
    let mut s = String::from("t,x,u\n");
    for (n, row) in p.u_values.iter().enumerate().filter(|(n, _)| n % every == 0) {
        for (i, u) in row.iter().enumerate() {
            let _ = writeln!(s, "{},{},{u}", n as f64 * p.dt, p.grid.x(i));
        }
    }
    Csv::new("policy.csv", s)
}

fn residual_csv(paths: &[PathFixedPoint]) -> Csv {
    let mut s = String::from("path,iteration,residual\n");
    for (k, p) in paths.iter().enumerate() {
        for (it, r) in p.residuals.iter().enumerate() {
            let _ = writeln!(s, "{k},{},{r}", it + 1);
        }
    }
    Csv::new("residuals.csv", s)
}

/// Pointwise least squares of u on m₁ across paths; returns the largest residual.
fn projection_residual(results: &[FixedPointResult]) -> f64 {
    let first = &results[0].policy;
    let mut worst = 0.0_f64;
    for n in 0..first.n_steps() {
        let m: Vec<f64> = results.iter().map(|r| r.path.slices[n].moment(1)).collect();
        let m_bar = m.iter().sum::<f64>() / m.len() as f64;
        let sxx: f64 = m.iter().map(|v| (v - m_bar).powi(2)).sum();
        for i in 0..first.grid.n() {
            let u: Vec<f64> = results.iter().map(|r| r.policy.u_values[n][i]).collect();
            let u_bar = u.iter().sum::<f64>() / u.len() as f64;
            let beta = if sxx > 0.0 { m.iter().zip(&u).map(|(a, b)| (a - m_bar) * (b - u_bar)).sum::<f64>() / sxx } else { 0.0 };
            for (mk, uk) in m.iter().zip(&u) {
                worst = worst.max((uk - u_bar - beta * (mk - m_bar)).abs());
            }
        }
    }
    worst
}

/// Damped Picard iteration; deterministic without common noise, per W path otherwise.
pub fn run_mfg(cfg: &Config) -> Result<(MfgReport, Vec<Csv>)> {
    debug_assert_eq!(cfg.command, Command::MfgFixedPoint);
    let coeffs = cfg.model();
    let grid = cfg.grid();
    let v0 = initial(cfg, &grid);
    let dt = cfg.f64("time.dt");
    let n_steps = cfg.n_steps();
    let opts = options(cfg);
    let every = cfg.usize("output.every");

    let (results, seeds, zero_path_identical) = if coeffs.has_common_noise() {
        let seeds = cfg.seeds();
        let results: Vec<FixedPointResult> = seeds
            .par_iter()
            .map(|&seed| mfg_fixed_point_per_path(&coeffs, &v0, &NoiseBundle::common_only(seed, dt, n_steps).w_path(), dt, opts))
            .collect::<Result<_>>()?;
        (results, seeds.into_iter().map(Some).collect::<Vec<_>>(), None)
    } else {
        let det = mfg_fixed_point_deterministic(&coeffs, &v0, n_steps, dt, opts)?;
        let zero = mfg_fixed_point_per_path(&coeffs, &v0, &vec![0.0; n_steps + 1], dt, opts)?;
        let same = zero.residuals == det.residuals && zero.policy.u_values == det.policy.u_values && zero.path.slices == det.path.slices;
        (vec![det], vec![None], Some(same))
    };
    let paths: Vec<PathFixedPoint> = results.iter().zip(&seeds).map(|(r, s)| PathFixedPoint::new(*s, r)).collect();
    let projection = (results.len() >= 2).then(|| projection_residual(&results));

    let refinement_change = if cfg.bool("mfg.refine") && !coeffs.has_common_noise() {
        let fine_grid = Grid1D::with_spacing(grid.x_min(), grid.x_max(), 0.5 * grid.h())?;
        let fine = mfg_fixed_point_deterministic(&coeffs, &initial(cfg, &fine_grid), 2 * n_steps, 0.5 * dt, opts)?;
        let coarse = &results[0].policy;
        let mut worst = 0.0_f64;
        for n in 0..coarse.n_steps() {
            for i in 0..grid.n() {
                worst = worst.max((coarse.u_values[n][i] - fine.policy.u_values[2 * n][2 * i]).abs());
            }
        }
        Some(worst)
    } else {
        None
    };

    let first = &results[0];
    let value = hjb_backward(&coeffs, &first.path)?.value;
    let csvs = vec![value_csv(&value, every), policy_csv(&first.policy, every), residual_csv(&paths)];
    let report = MfgReport { common_noise: coeffs.has_common_noise(), note: first.note.clone(), paths, zero_path_identical, projection_residual: projection, refinement_change };
    Ok((report, csvs))
}

#[derive(Debug, Clone, Serialize)]
pub struct NashReport {
    /// Every ε̂ is a lower bound on ε(N) restricted to the deviation family.
    pub label: &'static str,
    pub deviations: Vec<Deviation>,
    pub fixed_point_iterations: usize,
    pub fixed_point_residual: f64,
    pub fixed_point_converged: bool,
    pub rows: Vec<NashRow>,
    /// Q(N) = max(ε̂, 0) + upper CI half-width is strictly decreasing in N.
    pub q_strictly_decreasing: bool,
    /// OLS of log Q on log N; absent if some Q is zero.
    pub fit: Option<SlopeFit>,
}

/// ε̂(N) over the configured N-levels for the MFG policy of the configured model.
pub fn run_nash(cfg: &Config) -> Result<(NashReport, Vec<Csv>)> {
    debug_assert_eq!(cfg.command, Command::Nash);
    let coeffs = cfg.model();
    let grid = cfg.grid();
    let v0 = initial(cfg, &grid);
    let dt = cfg.f64("time.dt");
    let n_steps = cfg.n_steps();
    let fp = mfg_fixed_point_deterministic(&coeffs, &v0, n_steps, dt, options(cfg))?;
    // The crowd law under the final policy, which the limit control variate needs.
    let mu_path = solve_spde(&coeffs, &fp.policy, &v0, &vec![0.0; n_steps + 1], dt, SolveOptions::characteristics())?;
    let deviations: Vec<Deviation> = cfg.words("nash.deviations").iter().map(|d| parse_deviation(d).expect("validated deviation")).collect();
    let setup = NashSetup {
        coeffs: &coeffs,
        u_com: &fp.policy,
        mu_path: &mu_path,
        init_mean: cfg.f64("init.mean"),
        init_std: cfg.f64("init.std"),
        deviations: deviations.clone(),
        n_list: cfg.counts("nash.n_list").to_vec(),
        n_seeds: cfg.usize("seeds.count"),
        seed0: cfg.usize("seeds.start") as u64,
        bootstrap_reps: cfg.usize("nash.bootstrap"),
    };
    let rows = epsilon_nash_estimate(&setup)?;
    let q_strictly_decreasing = rows.windows(2).all(|w| w[1].q < w[0].q);
    let fit = if rows.iter().all(|r| r.q > 0.0) {
        let xs: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.q).collect();
        loglog_fit(&xs, &ys)
    } else {
        None
    };
    let mut eps = String::from("n,eps_hat,ci_upper,q\n");
    let mut dev = String::from("n,deviation,limit_gain,gain,stderr,raw_gain,raw_stderr\n");
    for r in &rows {
        let _ = writeln!(eps, "{},{},{},{}", r.n, r.eps_hat, r.ci_upper, r.q);
        for d in &r.deviations {
            let _ = writeln!(dev, "{},{},{},{},{},{},{}", r.n, d.deviation, d.limit_gain, d.gain, d.stderr, d.raw_gain, d.raw_stderr);
        }
    }
    let report = NashReport {
        label: "family-restricted lower bound on epsilon(N)",
        deviations,
        fixed_point_iterations: fp.residuals.len(),
        fixed_point_residual: *fp.residuals.last().expect("at least one iteration"),
        fixed_point_converged: fp.converged,
        rows,
        q_strictly_decreasing,
        fit,
    };
    Ok((report, vec![Csv::new("epsilon.csv", eps), Csv::new("deviations.csv", dev)]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deviations_parse() {
        assert_eq!(parse_deviation("shift:-0.1"), Some(Deviation::Shift(-0.1)));
        assert_eq!(parse_deviation("time-shift:0.2"), Some(Deviation::TimeShift(0.2)));
        assert_eq!(parse_deviation("null"), Some(Deviation::Null));
        assert_eq!(parse_deviation("time-shift:-1"), None);
        assert_eq!(parse_deviation("tilt:1"), None);
    }

    #[test]
    fn common_noise_fixed_point_per_path() {
        let text = "model.a = 0.3\nseeds.count = 3\ngrid.x_min = -6\ngrid.x_max = 6\ngrid.h = 0.1\ntime.T = 0.2\ntime.dt = 0.004\nmfg.n_iter = 10\nmfg.tol = 1e-6\n";
        let cfg = Config::parse(Command::MfgFixedPoint, text, &[]).unwrap();
        let (r, csvs) = run_mfg(&cfg).unwrap();
        assert!(r.common_noise && r.paths.len() == 3);
        assert!(r.projection_residual.unwrap().is_finite());
        assert!(r.note.contains("anticipates"));
        assert!(csvs[0].body.starts_with("t,x,value\n"));
    }
}
