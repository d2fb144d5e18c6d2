//! Coupled particle-versus-SPDE experiments for the O(1/N) rate.
//!
//! Each seed draws one common path W shared by the SPDE and every N-level;
//! idiosyncratic rows and initial positions are indexed by particle, so the
//! N-particle system is nested in the larger ones.

use super::config::{Command, Config};
use super::output::Csv;
use crate::error::Result;
use crate::grid::GridMeasure;
use crate::model::{Field1, MeasureRef, ModelCoefficients, MomentFunctional};
use crate::particles::{sample_initial, simulate, simulate_tagged_limit, Controls, NoiseBundle, Smoothing};
use crate::policy::{ConstPolicy, Policy};
use crate::spde::{solve_spde, MeasurePath, Method, SolveOptions};
use crate::stats::{loglog_fit, mean_stderr, SlopeFit};
use rayon::prelude::*;
use serde::Serialize;
use std::fmt::Write as _;

/// Points enter the slope fit only when their standard error is below this
/// fraction of the gap.
pub const SE_FRACTION: f64 = 0.3;

/// A slope is fitted only with at least this many N-levels.
pub const MIN_FIT_LEVELS: usize = 4;

/// Measure functionals of the chaos experiment.
pub fn chaos_functional(name: &str, omega: f64) -> Option<MomentFunctional> {
    Some(match name {
        "mean" => MomentFunctional::Linear(Field1::monomial(1)),
        "second-moment" => MomentFunctional::Linear(Field1::monomial(2)),
        "variance" => MomentFunctional::pair_half_sq_diff(),
        "pair-cos" => MomentFunctional::pair_cos_diff(omega),
        _ => return None,
    })
}

/// F(x, μ) for the tagged experiment.
#[derive(Debug, Clone)]
pub enum TaggedFunctional {
    /// F = x.
    X,
    /// F = x · m₁(μ).
    XMean,
    Measure(MomentFunctional),
}

impl TaggedFunctional {
    pub fn parse(name: &str, omega: f64) -> Option<Self> {
        match name {
            "x" => Some(TaggedFunctional::X),
            "x-mean" => Some(TaggedFunctional::XMean),
            other => chaos_functional(other, omega).map(TaggedFunctional::Measure),
        }
    }

    pub fn eval(&self, x: f64, mu: &MeasureRef) -> f64 {
        match self {
            TaggedFunctional::X => x,
            TaggedFunctional::XMean => x * mu.integrate(|y| y),
            TaggedFunctional::Measure(f) => f.value(mu),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GapPoint {
    pub n: usize,
    /// Mean over seeds of F(particles) − F(limit).
    pub gap: f64,
    pub stderr: f64,
    pub in_fit: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct FunctionalRate {
    pub functional: String,
    pub points: Vec<GapPoint>,
    /// OLS of log |gap| on log N over the points with `in_fit`.
    pub fit: Option<SlopeFit>,
    /// N-levels dropped by the standard-error filter.
    pub excluded: Vec<usize>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ChaosReport {
    pub n_list: Vec<usize>,
    pub n_seeds: usize,
    pub method: Method,
    pub functionals: Vec<FunctionalRate>,
}

/// Aggregates per-seed differences `diffs[seed][level]` into a rate table.
pub fn rate_table(name: &str, n_list: &[usize], diffs: &[Vec<f64>]) -> FunctionalRate {
    let mut points = Vec::with_capacity(n_list.len());
    for (li, &n) in n_list.iter().enumerate() {
        let col: Vec<f64> = diffs.iter().map(|d| d[li]).collect();
        let (gap, stderr) = mean_stderr(&col);
        let in_fit = gap != 0.0 && stderr < SE_FRACTION * gap.abs();
        points.push(GapPoint { n, gap, stderr, in_fit });
    }
    let used: Vec<&GapPoint> = points.iter().filter(|p| p.in_fit).collect();
    let excluded = points.iter().filter(|p| !p.in_fit).map(|p| p.n).collect();
    let (fit, note) = if used.len() >= MIN_FIT_LEVELS {
        let xs: Vec<f64> = used.iter().map(|p| p.n as f64).collect();
        let ys: Vec<f64> = used.iter().map(|p| p.gap.abs()).collect();
        (loglog_fit(&xs, &ys), None)
    } else {
        let msg = format!(
            "slope skipped: {} of {} N-levels have a standard error below {SE_FRACTION} of the gap (gap at Monte Carlo level)",
            used.len(),
            points.len()
        );
        (None, Some(msg))
    };
    FunctionalRate { functional: name.to_string(), points, fit, excluded, note }
}

/// Everything one seed shares across N-levels.
struct SeedContext {
    noise: NoiseBundle,
    path: MeasurePath,
}

fn seed_context(cfg: &Config, coeffs: &ModelCoefficients, policy: &dyn Policy, seed: u64, n_max: usize) -> Result<SeedContext> {
    let dt = cfg.f64("time.dt");
    let noise = NoiseBundle::generate(seed, dt, cfg.n_steps(), n_max);
    let v0 = GridMeasure::gaussian(&cfg.grid(), cfg.f64("init.mean"), cfg.f64("init.std"));
    let path = solve_spde(coeffs, policy, &v0, &noise.w_path(), dt, solve_options(cfg))?;
    Ok(SeedContext { noise, path })
}

pub(crate) fn solve_options(cfg: &Config) -> SolveOptions {
    let method = if cfg.text("spde.method") == "characteristics" { Method::Characteristics } else { Method::Ito };
    SolveOptions { method, milstein: cfg.bool("spde.milstein") }
}

fn smoothing(cfg: &Config, policy: &dyn Policy) -> Option<Smoothing> {
    policy.measure_dependent().then(|| Smoothing { grid: cfg.grid(), bandwidth: cfg.f64("smoothing.bandwidth") })
}

fn gaps_csv(tables: &[FunctionalRate]) -> Csv {
    let mut s = String::from("functional,n,gap,stderr,in_fit\n");
    for t in tables {
        for p in &t.points {
            let _ = writeln!(s, "{},{},{},{},{}", t.functional, p.n, p.gap, p.stderr, p.in_fit);
        }
    }
    Csv::new("gaps.csv", s)
}

/// |E F(μ^N_T) − E F(μ_T)| against N for the measure functionals in the config.
pub fn run_chaos(cfg: &Config) -> Result<(ChaosReport, Vec<Csv>)> {
    debug_assert_eq!(cfg.command, Command::Chaos);
    let coeffs = cfg.model();
    let policy = cfg.policy();
    let n_list = cfg.counts("particles.n_list").to_vec();
    let n_max = *n_list.iter().max().expect("validated list");
    let omega = cfg.f64("chaos.omega");
    let names = cfg.words("chaos.functionals");
    let funcs: Vec<MomentFunctional> = names.iter().map(|n| chaos_functional(n, omega).expect("validated name")).collect();
    let smooth = smoothing(cfg, &policy);
    let (mean, std) = (cfg.f64("init.mean"), cfg.f64("init.std"));

    // per_seed[seed][functional][level]
    let per_seed: Vec<Vec<Vec<f64>>> = cfg
        .seeds()
        .into_par_iter()
        .map(|seed| {
            let ctx = seed_context(cfg, &coeffs, &policy, seed, n_max)?;
            let terminal = MeasureRef::Grid(ctx.path.terminal());
            let limit: Vec<f64> = funcs.iter().map(|f| f.value(&terminal)).collect();
            let mut out = vec![Vec::with_capacity(n_list.len()); funcs.len()];
            for &n in &n_list {
                let x0 = sample_initial(seed, n, mean, std, usize::MAX);
                let traj = simulate(&coeffs, Controls::symmetric(&policy), &ctx.noise.nested(n), &x0, smooth.as_ref())?;
                let atoms = MeasureRef::Atoms(traj.final_positions());
                for (fi, f) in funcs.iter().enumerate() {
                    out[fi].push(f.value(&atoms) - limit[fi]);
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let tables: Vec<FunctionalRate> = names
        .iter()
        .enumerate()
        .map(|(fi, name)| {
            let diffs: Vec<Vec<f64>> = per_seed.iter().map(|s| s[fi].clone()).collect();
            rate_table(name, &n_list, &diffs)
        })
        .collect();
    let csv = gaps_csv(&tables);
    Ok((ChaosReport { n_list, n_seeds: per_seed.len(), method: solve_options(cfg).method, functionals: tables }, vec![csv]))
}

#[derive(Debug, Clone, Serialize)]
pub struct TaggedReport {
    pub n_list: Vec<usize>,
    pub n_seeds: usize,
    pub method: Method,
    pub u_ind: f64,
    pub antithetic: bool,
    pub functionals: Vec<FunctionalRate>,
}

/// E F(X¹_T, μ^N_T) − E F(X̂_T, μ_T) for a tagged player using u ≡ `tagged.u_ind`
/// among N − 1 players using the configured policy. The limit tagged path
/// shares the first idiosyncratic row, the first initial position and W.
pub fn run_tagged_chaos(cfg: &Config) -> Result<(TaggedReport, Vec<Csv>)> {
    debug_assert_eq!(cfg.command, Command::TaggedChaos);
    let coeffs = cfg.model();
    let policy = cfg.policy();
    let u_ind_value = cfg.f64("tagged.u_ind");
    let u_ind = ConstPolicy(u_ind_value);
    let n_list = cfg.counts("particles.n_list").to_vec();
    let n_max = *n_list.iter().max().expect("validated list");
    let omega = cfg.f64("chaos.omega");
    let names = cfg.words("tagged.functionals");
    let funcs: Vec<TaggedFunctional> = names.iter().map(|n| TaggedFunctional::parse(n, omega).expect("validated name")).collect();
    let smooth = smoothing(cfg, &policy);
    let antithetic = cfg.bool("tagged.antithetic");
    let (mean, std) = (cfg.f64("init.mean"), cfg.f64("init.std"));
    let dt = cfg.f64("time.dt");

    let per_seed: Vec<Vec<Vec<f64>>> = cfg
        .seeds()
        .into_par_iter()
        .map(|seed| {
            let ctx = seed_context(cfg, &coeffs, &policy, seed, n_max)?;
            let x01 = sample_initial(seed, 1, mean, std, usize::MAX)[0];
            let (lim_path, _) = simulate_tagged_limit(&coeffs, &u_ind, &ctx.path.slices, dt, &ctx.noise.b_increments[0], &ctx.noise.w_increments, x01)?;
            let terminal = MeasureRef::Grid(ctx.path.terminal());
            let x_lim = *lim_path.last().expect("nonempty path");
            let limit: Vec<f64> = funcs.iter().map(|f| f.eval(x_lim, &terminal)).collect();
            let anti = antithetic.then(|| ctx.noise.antithetic_rows(1));
            let mut out = vec![Vec::with_capacity(n_list.len()); funcs.len()];
            for &n in &n_list {
                let controls = Controls { common: &policy, tagged: Some(&u_ind) };
                let run = |bundle: &NoiseBundle, reflect: usize| -> Result<Vec<f64>> {
                    let x0 = sample_initial(seed, n, mean, std, reflect);
                    let traj = simulate(&coeffs, controls, &bundle.nested(n), &x0, smooth.as_ref())?;
                    let fin = traj.final_positions();
                    let atoms = MeasureRef::Atoms(fin);
                    Ok(funcs.iter().map(|f| f.eval(fin[0], &atoms)).collect())
                };
                let mut vals = run(&ctx.noise, usize::MAX)?;
                if let Some(a) = &anti {
                    let second = run(a, 1)?;
                    for (v, s) in vals.iter_mut().zip(second) {
                        *v = 0.5 * (*v + s);
                    }
                }
                for (fi, v) in vals.into_iter().enumerate() {
                    out[fi].push(v - limit[fi]);
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let tables: Vec<FunctionalRate> = names
        .iter()
        .enumerate()
        .map(|(fi, name)| {
            let diffs: Vec<Vec<f64>> = per_seed.iter().map(|s| s[fi].clone()).collect();
            rate_table(name, &n_list, &diffs)
        })
        .collect();
    let csv = gaps_csv(&tables);
    let report = TaggedReport { n_list, n_seeds: per_seed.len(), method: solve_options(cfg).method, u_ind: u_ind_value, antithetic, functionals: tables };
    Ok((report, vec![csv]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(cmd: Command, extra: &str) -> Config {
        let text = format!("particles.n_list = 4,8\nseeds.count = 3\ngrid.x_min = -6\ngrid.x_max = 6\ngrid.h = 0.1\ntime.T = 0.1\ntime.dt = 0.005\n{extra}");
        Config::parse(cmd, &text, &[]).unwrap()
    }

    #[test]
    fn symmetric_tagged_run_matches_chaos() {
        let chaos = small(Command::Chaos, "chaos.functionals = variance,mean\npolicy = constant:0.3\n");
        let tagged = small(Command::TaggedChaos, "tagged.functionals = variance,mean\npolicy = constant:0.3\ntagged.u_ind = 0.3\ntagged.antithetic = false\n");
        let (a, _) = run_chaos(&chaos).unwrap();
        let (b, _) = run_tagged_chaos(&tagged).unwrap();
        for (fa, fb) in a.functionals.iter().zip(&b.functionals) {
            for (pa, pb) in fa.points.iter().zip(&fb.points) {
                assert_eq!(pa.gap, pb.gap);
                assert_eq!(pa.stderr, pb.stderr);
            }
        }
    }

    #[test]
    fn rate_table_filters_and_fits() {
        let n = [50, 100, 200, 400, 800];
        // gap c/N with tiny spread: all levels pass and the slope is −1.
        let diffs: Vec<Vec<f64>> = (0..10).map(|s| n.iter().map(|k| (1.0 + 0.01 * (s as f64 - 4.5)) / *k as f64).collect()).collect();
        let t = rate_table("f", &n, &diffs);
        let fit = t.fit.unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-2, "{}", fit.slope);
        assert!(t.excluded.is_empty());
        // Pure noise around zero: nothing passes, the slope is skipped.
        let noise: Vec<Vec<f64>> = (0..10).map(|s| n.iter().map(|_| if s % 2 == 0 { 1.0 } else { -1.0 }).collect()).collect();
        let t = rate_table("g", &n, &noise);
        assert!(t.fit.is_none() && t.note.is_some());
        assert_eq!(t.excluded.len(), 5);
    }
}
