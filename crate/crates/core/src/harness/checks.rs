//! Deterministic checks: generator decomposition, sensitivity oracles, and
//! SPDE solver diagnostics.

use super::config::{Command, Config, PolicySpec};
use super::output::Csv;
use crate::error::{Error, Result};
use crate::generators::{decomposition_residual, gallery};
use crate::grid::{mollified_delta, Grid1D, GridMeasure};
use crate::model::ModelCoefficients;
use crate::particles::NoiseBundle;
use crate::rng::{normal_at, STREAM_AUX};
use crate::sensitivity::{eta_fd_oracle, relative_l1, solve_eta, solve_xi, xi_fd_oracle};
use crate::spde::{solve_spde, MeasurePath, Method, SolveOptions};
use rayon::prelude::*;
use serde::Serialize;
use std::fmt::Write as _;

#[derive(Debug, Clone, Serialize)]
pub struct GeneratorRow {
    pub functional: String,
    pub n: usize,
    pub configs: usize,
    pub max_residual: f64,
    pub mean_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GeneratorReport {
    pub rows: Vec<GeneratorRow>,
    pub max_residual: f64,
}

/// Atomic configuration `c` of size `n`: iid N(0, spread²) positions.
pub fn random_configuration(seed: u64, n: usize, c: usize, spread: f64) -> Vec<f64> {
    let stream = STREAM_AUX + ((n as u64) << 24) + c as u64;
    (0..n).map(|i| spread * normal_at(seed, stream, i as u64)).collect()
}

/// |A_N F − Λ_lim F − Λ_corr F / N| over the gallery, each N, and random configurations.
pub fn run_generator_check(cfg: &Config) -> Result<(GeneratorReport, Vec<Csv>)> {
    debug_assert_eq!(cfg.command, Command::GeneratorCheck);
    let coeffs = cfg.model();
    let policy = cfg.policy();
    let seed = cfg.usize("seeds.start") as u64;
    let spread = cfg.f64("generator.spread");
    let n_configs = cfg.usize("generator.configs");
    let funcs = gallery();
    let tasks: Vec<(usize, usize, usize)> = (0..funcs.len())
        .flat_map(|fi| cfg.counts("generator.n_list").iter().flat_map(move |&n| (0..n_configs).map(move |c| (fi, n, c))))
        .collect();
    let residuals: Vec<f64> = tasks
        .par_iter()
        .map(|&(fi, n, c)| decomposition_residual(&coeffs, &policy, &funcs[fi].1, &random_configuration(seed, n, c, spread), 0.0))
        .collect::<Result<_>>()?;
    let mut csv = String::from("functional,n,config,residual\n");
    let mut rows = Vec::new();
    for (chunk_tasks, chunk) in tasks.chunks(n_configs).zip(residuals.chunks(n_configs)) {
        let (fi, n, _) = chunk_tasks[0];
        for ((_, _, c), r) in chunk_tasks.iter().zip(chunk) {
            let _ = writeln!(csv, "{},{n},{c},{r}", funcs[fi].0);
        }
        rows.push(GeneratorRow {
            functional: funcs[fi].0.to_string(),
            n,
            configs: n_configs,
            max_residual: chunk.iter().copied().fold(0.0, f64::max),
            mean_residual: chunk.iter().sum::<f64>() / chunk.len() as f64,
        });
    }
    let max_residual = rows.iter().map(|r| r.max_residual).fold(0.0, f64::max);
    Ok((GeneratorReport { rows, max_residual }, vec![Csv::new("residuals.csv", csv)]))
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleGap {
    pub h: f64,
    pub relative_l1: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SensitivityRow {
    pub seed: u64,
    /// ξ from the linearized equation against central differences of the solver.
    pub xi_fd: Vec<OracleGap>,
    /// max_t |mass of ξ_t − 1|.
    pub xi_mass_error: f64,
    /// ‖η(x₁, x₂) − η(x₂, x₁)‖_{L¹} at T.
    pub eta_symmetry: f64,
    /// max_t total variation of η_t.
    pub eta_max_tv: f64,
    /// max_t |mass of η_t|.
    pub eta_mass: f64,
    /// η against mixed central differences; absent when η vanishes.
    pub eta_fd: Vec<OracleGap>,
    /// m₁(ξ_T) against its closed form, for ou-common with constant control.
    pub xi_mean_oracle_gap: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SensitivityReport {
    pub x1: f64,
    pub x2: f64,
    pub bandwidth: f64,
    pub rows: Vec<SensitivityRow>,
    pub max_xi_fd_gap: f64,
    pub max_eta_symmetry: f64,
    pub max_eta_fd_gap: Option<f64>,
    pub max_eta_tv: f64,
}

/// η is treated as zero below this total variation.
const ETA_ZERO: f64 = 1e-8;

fn sensitivity_row(cfg: &Config, coeffs: &ModelCoefficients, policy: &PolicySpec, seed: u64) -> Result<(SensitivityRow, Option<Csv>)> {
    let dt = cfg.f64("time.dt");
    let n_steps = cfg.n_steps();
    let grid = cfg.grid();
    let v0 = GridMeasure::gaussian(&grid, cfg.f64("init.mean"), cfg.f64("init.std"));
    let w = NoiseBundle::common_only(seed, dt, n_steps).w_path();
    let base = solve_spde(coeffs, policy, &v0, &w, dt, SolveOptions::characteristics())?;
    let (x1, x2, bw) = (cfg.f64("sensitivity.x1"), cfg.f64("sensitivity.x2"), cfg.f64("sensitivity.bandwidth"));
    let xi1 = solve_xi(coeffs, policy, &base, x1, bw)?;
    let xi2 = solve_xi(coeffs, policy, &base, x2, bw)?;
    let xi_t = xi1.xi.last().expect("nonempty");
    let mut xi_fd = Vec::new();
    let mut first_fd = None;
    for &h in cfg.floats("sensitivity.h_bump") {
        let fd = xi_fd_oracle(coeffs, policy, &base, x1, bw, h)?;
        let fd_t = fd.last().expect("nonempty").clone();
        xi_fd.push(OracleGap { h, relative_l1: relative_l1(xi_t, &fd_t) });
        first_fd.get_or_insert(fd_t);
    }
    let xi_mass_error = xi1.xi_g.iter().map(|m| (m.mass() - 1.0).abs()).fold(0.0, f64::max);
    let e12 = solve_eta(coeffs, policy, &base, &xi1, &xi2)?;
    let e21 = solve_eta(coeffs, policy, &base, &xi2, &xi1)?;
    let eta_t = e12.last().expect("nonempty");
    let eta_symmetry = eta_t.l1_distance(e21.last().expect("nonempty"));
    let eta_max_tv = e12.iter().map(GridMeasure::total_variation).fold(0.0, f64::max);
    let eta_mass = e12.iter().map(|m| m.mass().abs()).fold(0.0, f64::max);
    let mut eta_fd = Vec::new();
    let mut first_eta_fd = None;
    if eta_max_tv > ETA_ZERO {
        for &h in cfg.floats("sensitivity.h_mixed") {
            let fd = eta_fd_oracle(coeffs, policy, &base, x1, x2, bw, h)?;
            let fd_t = fd.last().expect("nonempty").clone();
            eta_fd.push(OracleGap { h, relative_l1: relative_l1(eta_t, &fd_t) });
            first_eta_fd.get_or_insert(fd_t);
        }
    }
    let xi_mean_oracle_gap = match policy {
        PolicySpec::Constant(u) if cfg.text("model.name") == "ou-common" && cfg.f64("model.variance_drift") == 0.0 => {
            // d/dh of the mean under v₀ + hδ̃, whose extra unit of mass also carries u and W:
            // m′_T = m′₀ + κ ∫ m_t dt + u T + a W_T with m_t = m₀ + u t + a W_t.
            let (kappa, a) = (cfg.f64("model.kappa"), cfg.f64("model.a"));
            let m0 = v0.moment(1);
            let riemann: f64 = w[..n_steps].iter().enumerate().map(|(n, wn)| (m0 + u * n as f64 * dt + a * wn) * dt).sum();
            let oracle = xi1.xi[0].moment(1) + kappa * riemann + u * n_steps as f64 * dt + a * w[n_steps];
            Some((xi_t.moment(1) - oracle).abs())
        }
        _ => None,
    };
    let csv = (seed == cfg.usize("seeds.start") as u64).then(|| {
        let delta = mollified_delta(&grid, x1, bw).ok();
        let mut s = String::from("x,xi,xi_fd,eta,eta_fd,bump\n");
        for i in 0..grid.n() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                grid.x(i),
                xi_t.density[i],
                first_fd.as_ref().map_or(f64::NAN, |m| m.density[i]),
                eta_t.density[i],
                first_eta_fd.as_ref().map_or(f64::NAN, |m| m.density[i]),
                delta.as_ref().map_or(f64::NAN, |m| m.density[i]),
            );
        }
        Csv::new("terminal_sensitivities.csv", s)
    });
    Ok((SensitivityRow { seed, xi_fd, xi_mass_error, eta_symmetry, eta_max_tv, eta_mass, eta_fd, xi_mean_oracle_gap }, csv))
}

/// First and second sensitivities of μ_T to the initial law, with their oracles, per W path.
pub fn run_sensitivity(cfg: &Config) -> Result<(SensitivityReport, Vec<Csv>)> {
    debug_assert_eq!(cfg.command, Command::Sensitivity);
    let coeffs = cfg.model();
    let policy = cfg.policy();
    let out: Vec<(SensitivityRow, Option<Csv>)> =
        cfg.seeds().into_par_iter().map(|seed| sensitivity_row(cfg, &coeffs, &policy, seed)).collect::<Result<_>>()?;
    let mut csvs = Vec::new();
    let mut rows = Vec::new();
    for (row, csv) in out {
        rows.push(row);
        csvs.extend(csv);
    }
    let max_xi_fd_gap = rows.iter().flat_map(|r| r.xi_fd.iter().map(|g| g.relative_l1)).fold(0.0, f64::max);
    let max_eta_symmetry = rows.iter().map(|r| r.eta_symmetry).fold(0.0, f64::max);
    let eta_gaps: Vec<f64> = rows.iter().filter_map(|r| r.eta_fd.first().map(|g| g.relative_l1)).collect();
    let max_eta_fd_gap = (!eta_gaps.is_empty()).then(|| eta_gaps.iter().copied().fold(0.0, f64::max));
    let max_eta_tv = rows.iter().map(|r| r.eta_max_tv).fold(0.0, f64::max);
    let report = SensitivityReport {
        x1: cfg.f64("sensitivity.x1"),
        x2: cfg.f64("sensitivity.x2"),
        bandwidth: cfg.f64("sensitivity.bandwidth"),
        rows,
        max_xi_fd_gap,
        max_eta_symmetry,
        max_eta_fd_gap,
        max_eta_tv,
    };
    Ok((report, csvs))
}

#[derive(Debug, Clone, Serialize)]
pub struct SpdeRow {
    pub seed: u64,
    pub w_t: f64,
    pub max_mass_error: f64,
    pub max_negative_mass: f64,
    /// Largest mass rescaling of a remapped characteristics slice.
    pub remap_correction: f64,
    pub mean_t: f64,
    pub second_moment_t: f64,
    /// m₁(μ_T) − m₁(μ₀) − u T − a W_T for ou-common with constant control.
    pub mean_oracle_gap: Option<f64>,
    /// |Δm₁| and |Δm₂| against the other method on the same W path.
    pub cross_gap: Option<[f64; 2]>,
    /// The same gaps at (h/2, dt/2); the coarse W sums pairs of the fine increments.
    pub cross_gap_refined: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpdeReport {
    pub method: Method,
    pub rows: Vec<SpdeRow>,
    pub max_mass_error: f64,
    pub max_negative_mass: f64,
    /// max(2e−2, 5(dt + h²)).
    pub cross_tolerance: f64,
    pub max_cross_gap: Option<f64>,
    /// Σ coarse cross gaps / Σ refined cross gaps over all paths.
    pub refinement_ratio: Option<f64>,
    pub note: Option<String>,
}

/// Coarse cross gaps at or below this sum are rounding-level agreement.
pub const ROUNDING_FLOOR: f64 = 1e-12;

fn other(method: Method) -> Method {
    match method {
        Method::Ito => Method::Characteristics,
        Method::Characteristics => Method::Ito,
    }
}

fn moment_gap(a: &MeasurePath, b: &MeasurePath) -> [f64; 2] {
    let (ta, tb) = (a.terminal(), b.terminal());
    [(ta.moment(1) - tb.moment(1)).abs(), (ta.moment(2) - tb.moment(2)).abs()]
}

/// Solves with `opts` and the other method, returning both paths.
fn solve_pair(
    coeffs: &ModelCoefficients,
    policy: &PolicySpec,
    v0: &GridMeasure,
    w: &[f64],
    dt: f64,
    opts: SolveOptions,
) -> Result<(MeasurePath, MeasurePath)> {
    let a = solve_spde(coeffs, policy, v0, w, dt, opts)?;
    let b = solve_spde(coeffs, policy, v0, w, dt, SolveOptions { method: other(opts.method), ..opts })?;
    Ok((a, b))
}

fn density_csv(path: &MeasurePath, every: usize) -> Csv {
    let mut s = String::from("t,x,density\n");
    for (n, (t, m)) in path.times.iter().zip(&path.slices).enumerate() {
        if n % every != 0 && n != path.n_steps() {
            continue;
        }
        for (i, d) in m.density.iter().enumerate() {
            let _ = writeln!(s, "{t},{},{d}", m.grid.x(i));
        }
    }
    Csv::new("density.csv", s)
}

/// The configured SPDE on the common-noise path of `seed`, without comparisons.
pub fn solve_path(cfg: &Config, seed: u64) -> Result<MeasurePath> {
    if cfg.command != Command::SpdeSolve {
        return Err(Error::Argument(format!("{} config cannot drive an SPDE solve", cfg.command.name())));
    }
    let dt = cfg.f64("time.dt");
    let v0 = GridMeasure::gaussian(&cfg.grid(), cfg.f64("init.mean"), cfg.f64("init.std"));
    let w = NoiseBundle::common_only(seed, dt, cfg.n_steps()).w_path();
    solve_spde(&cfg.model(), &cfg.policy(), &v0, &w, dt, super::chaos::solve_options(cfg))
}

/// Runs the SPDE on each seed's W path and reports conservation, positivity,
/// the closed-form mean where available, and cross-method agreement.
pub fn run_spde_solve(cfg: &Config) -> Result<(SpdeReport, Vec<Csv>)> {
    debug_assert_eq!(cfg.command, Command::SpdeSolve);
    let coeffs = cfg.model();
    let policy = cfg.policy();
    let opts = super::chaos::solve_options(cfg);
    let (compare, refine) = (cfg.bool("spde.compare"), cfg.bool("spde.refine"));
    let dt = cfg.f64("time.dt");
    let n_steps = cfg.n_steps();
    let grid = cfg.grid();
    let (mean, std) = (cfg.f64("init.mean"), cfg.f64("init.std"));
    let v0 = GridMeasure::gaussian(&grid, mean, std);
    let oracle_ok = cfg.text("model.name") == "ou-common" && cfg.f64("model.variance_drift") == 0.0 && matches!(policy, PolicySpec::Constant(_));
    let first_seed = cfg.usize("seeds.start") as u64;
    let every = cfg.usize("output.every");

    let out: Vec<(SpdeRow, Option<Csv>)> = cfg
        .seeds()
        .into_par_iter()
        .map(|seed| {
            let fine_noise = refine.then(|| NoiseBundle::common_only(seed, 0.5 * dt, 2 * n_steps));
            let w = match &fine_noise {
                Some(f) => f.coarsened().w_path(),
                None => NoiseBundle::common_only(seed, dt, n_steps).w_path(),
            };
            let path = solve_spde(&coeffs, &policy, &v0, &w, dt, opts)?;
            let mut max_mass_error = path.max_mass_error();
            let mut max_negative_mass = path.max_negative_mass();
            let mut remap_correction = path.remap_correction;
            let term = path.terminal();
            let mean_oracle_gap = oracle_ok.then(|| {
                let u = match policy {
                    PolicySpec::Constant(u) => u,
                    _ => 0.0,
                };
                let a = cfg.f64("model.a");
                (term.moment(1) - v0.moment(1) - u * n_steps as f64 * dt - a * w[n_steps]).abs()
            });
            let mut cross_gap = None;
            let mut cross_gap_refined = None;
            if compare {
                let alt = solve_spde(&coeffs, &policy, &v0, &w, dt, SolveOptions { method: other(opts.method), ..opts })?;
                max_mass_error = max_mass_error.max(alt.max_mass_error());
                max_negative_mass = max_negative_mass.max(alt.max_negative_mass());
                remap_correction = remap_correction.max(alt.remap_correction);
                cross_gap = Some(moment_gap(&path, &alt));
                if let Some(f) = &fine_noise {
                    let fine_grid = Grid1D::with_spacing(grid.x_min(), grid.x_max(), 0.5 * grid.h())?;
                    let fine_v0 = GridMeasure::gaussian(&fine_grid, mean, std);
                    let (fa, fb) = solve_pair(&coeffs, &policy, &fine_v0, &f.w_path(), 0.5 * dt, opts)?;
                    max_mass_error = max_mass_error.max(fa.max_mass_error()).max(fb.max_mass_error());
                    max_negative_mass = max_negative_mass.max(fa.max_negative_mass()).max(fb.max_negative_mass());
                    remap_correction = remap_correction.max(fa.remap_correction).max(fb.remap_correction);
                    cross_gap_refined = Some(moment_gap(&fa, &fb));
                }
            }
            let row = SpdeRow {
                seed,
                w_t: w[n_steps],
                max_mass_error,
                max_negative_mass,
                remap_correction,
                mean_t: term.moment(1),
                second_moment_t: term.moment(2),
                mean_oracle_gap,
                cross_gap,
                cross_gap_refined,
            };
            let csv = (seed == first_seed).then(|| density_csv(&path, every));
            Ok((row, csv))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut csvs = Vec::new();
    for (r, c) in out {
        rows.push(r);
        csvs.extend(c);
    }
    let mut summary = String::from("seed,w_t,max_mass_error,max_negative_mass,mean_t,second_moment_t\n");
    for r in &rows {
        let _ = writeln!(summary, "{},{},{},{},{},{}", r.seed, r.w_t, r.max_mass_error, r.max_negative_mass, r.mean_t, r.second_moment_t);
    }
    csvs.push(Csv::new("paths.csv", summary));
    let h = grid.h();
    let cross_tolerance = (2e-2_f64).max(5.0 * (dt + h * h));
    let max_cross_gap = compare.then(|| rows.iter().flat_map(|r| r.cross_gap.unwrap_or_default()).fold(0.0, f64::max));
    let (refinement_ratio, note) = if compare && refine {
        let coarse: f64 = rows.iter().flat_map(|r| r.cross_gap.unwrap_or_default()).sum();
        let fine: f64 = rows.iter().flat_map(|r| r.cross_gap_refined.unwrap_or_default()).sum();
        if coarse <= ROUNDING_FLOOR * rows.len() as f64 {
            (None, Some(format!("methods agree to rounding on the coarse level (summed gap {coarse:e}); no refinement ratio")))
        } else {
            (Some(coarse / fine), None)
        }
    } else {
        (None, None)
    };
    let report = SpdeReport {
        method: opts.method,
        max_mass_error: rows.iter().map(|r| r.max_mass_error).fold(0.0, f64::max),
        max_negative_mass: rows.iter().map(|r| r.max_negative_mass).fold(0.0, f64::max),
        rows,
        cross_tolerance,
        max_cross_gap,
        refinement_ratio,
        note,
    };
    Ok((report, csvs))
}
