//! Best response, the backward HJB equation along a frozen measure path, the
//! damped Picard iteration for MFG consistency, and ε-Nash estimation.
//!
//! Along a given path μ_t the value solves
//!
//! ```text
//! ∂_t V + b₁ ∂_x V + min_u [b₂ u ∂_x V + J(x, μ, u)] + ½(σ_ind² + σ_com²) ∂²_x V = 0,   V(T) = V_T(·, μ_T)
//! ```
//!
//! stepped explicitly backward; u at step n is the minimizer for ∂_x V^{n+1}
//! with coefficients at (t_n, μ_n). Terms involving derivatives in μ are not
//! part of this equation: they vanish without common noise, and with common
//! noise the per-path solve is an anticipating approximation.

use crate::error::{Error, Result};
use crate::grid::{diff1_values, Grid1D, GridMeasure};
use crate::model::{MeasureRef, ModelCoefficients};
use crate::particles::{sample_initial, simulate_tagged_pair, simulate_tagged_limit, NoiseBundle};
use crate::policy::{Policy, PolicyField};
use crate::rng::STREAM_AUX;
use crate::spde::{solve_spde, MeasurePath, SolveOptions};
use crate::stats::{bootstrap_quantile, mean_stderr};
use rayon::prelude::*;
use serde::Serialize;
use std::fmt::Write as _;

/// Minimizer of p·u + ½ r u² + q u⁴ over the control box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BestResponse {
    pub u: f64,
    pub clamped: bool,
}

/// û = argmin_u [b₂(x, μ) u ∂_x V + J(x, μ, u)] over the box.
pub fn best_response(coeffs: &ModelCoefficients, dvdx: f64, x: f64, mu: &MeasureRef) -> Result<BestResponse> {
    coeffs.check_convexity()?;
    let b2 = coeffs.b2.eval_at(x, mu);
    Ok(minimize_control(coeffs, b2 * dvdx))
}

/// Unique root of r u + 4q u³ + p = 0, clamped; convexity is the caller's check.
fn minimize_control(coeffs: &ModelCoefficients, p: f64) -> BestResponse {
    let rc = &coeffs.running_cost;
    let (lo, hi) = coeffs.u_box;
    let grad = |u: f64| rc.du(u) + p;
    if grad(lo) >= 0.0 {
        return BestResponse { u: lo, clamped: grad(lo) > 0.0 };
    }
    if grad(hi) <= 0.0 {
        return BestResponse { u: hi, clamped: grad(hi) < 0.0 };
    }
    if rc.q == 0.0 {
        return BestResponse { u: -p / rc.r, clamped: false };
    }
    // Newton safeguarded by the bracket [a, b] with grad(a) < 0 < grad(b).
    let (mut a, mut b) = (lo, hi);
    let mut u = (-p / rc.r).clamp(lo, hi);
    for _ in 0..200 {
        let g = grad(u);
        if g == 0.0 {
            break;
        }
        if g < 0.0 {
            a = u;
        } else {
            b = u;
        }
        let mut next = u - g / rc.duu(u);
        if !(next > a && next < b) {
            next = 0.5 * (a + b);
        }
        if (next - u).abs() <= 1e-15 * (1.0 + u.abs()) {
            u = next;
            break;
        }
        u = next;
    }
    BestResponse { u, clamped: false }
}

/// V on the space–time grid; row n holds V(t_n, ·).
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    pub dt: f64,
    pub grid: Grid1D,
    pub values: Vec<Vec<f64>>,
}

impl ValueField {
    /// Long-format CSV `t,x,value`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,x,value\n");
        for (n, row) in self.values.iter().enumerate() {
            for (i, v) in row.iter().enumerate() {
                let _ = writeln!(s, "{},{},{}", n as f64 * self.dt, self.grid.x(i), v);
            }
        }
        s
    }

    /// ∫ V(0, x) μ(dx).
    pub fn initial_expectation(&self, mu: &GridMeasure) -> f64 {
        crate::grid::pair(&self.values[0], mu).unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone)]
pub struct HjbSolution {
    pub value: ValueField,
    pub policy: PolicyField,
    /// Nodes where the minimizer sat on the box boundary.
    pub clamped: usize,
}

/// Second derivative with the boundary values copied from the neighbours.
fn vxx(grid: &Grid1D, v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let h2 = grid.h() * grid.h();
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        d[i] = (v[i + 1] - 2.0 * v[i] + v[i - 1]) / h2;
    }
    d[0] = d[1];
    d[n - 1] = d[n - 2];
    d
}

fn check_backward_cfl(grid: &Grid1D, dt: f64, d_max: f64, b_max: f64) -> Result<()> {
    let h = grid.h();
    if d_max > 0.0 && dt > h * h / d_max * (1.0 + 1e-12) {
        return Err(Error::Stability(format!("backward step {dt} exceeds h²/max σ² = {}", h * h / d_max)));
    }
    if b_max > 0.0 && dt > h / b_max * (1.0 + 1e-12) {
        return Err(Error::Stability(format!("backward step {dt} exceeds h/max|b| = {}", h / b_max)));
    }
    Ok(())
}

/// Backward sweep shared by the HJB and the linear policy-value equation.
fn backward(
    coeffs: &ModelCoefficients,
    path: &MeasurePath,
    mut control: impl FnMut(usize, f64, &MeasureRef, f64, f64) -> (f64, bool),
) -> Result<(ValueField, Vec<Vec<f64>>, usize)> {
    let grid = &path.grid;
    let n_steps = path.n_steps();
    let dt = path.dt;
    let xs = grid.points();
    let d: Vec<f64> = xs.iter().map(|x| coeffs.sigma_tot2(*x)).collect();
    let d_max = d.iter().fold(0.0_f64, |m, v| m.max(*v));
    let terminal = MeasureRef::Grid(path.terminal());
    let mut values = vec![Vec::new(); n_steps + 1];
    values[n_steps] = xs.iter().map(|x| coeffs.terminal_cost.eval_at(*x, &terminal)).collect();
    let mut u_rows = vec![Vec::new(); n_steps];
    let mut clamped = 0;
    for n in (0..n_steps).rev() {
        let next = &values[n + 1];
        let vx = diff1_values(grid, next);
        let vxx = vxx(grid, next);
        let mu = MeasureRef::Grid(&path.slices[n]);
        let dm = coeffs.drift_moments(&mu);
        let sm = coeffs.running_cost.state.moments(&mu);
        let mut row = vec![0.0; xs.len()];
        let mut urow = vec![0.0; xs.len()];
        let mut b_max = 0.0_f64;
        for (j, &x) in xs.iter().enumerate() {
            let b2 = coeffs.b2.eval(x, &dm.b2);
            let (u, c) = control(n, x, &mu, b2, vx[j]);
            coeffs.check_control(u)?;
            clamped += c as usize;
            let b = coeffs.drift_with(x, &dm, u);
            b_max = b_max.max(b.abs());
            row[j] = next[j] + dt * (b * vx[j] + coeffs.running_cost.eval(x, &sm, u) + 0.5 * d[j] * vxx[j]);
            urow[j] = u;
        }
        check_backward_cfl(grid, dt, d_max, b_max)?;
        values[n] = row;
        u_rows[n] = urow;
    }
    Ok((ValueField { dt, grid: grid.clone(), values }, u_rows, clamped))
}

/// Value and optimal feedback along a frozen measure path.
pub fn hjb_backward(coeffs: &ModelCoefficients, path: &MeasurePath) -> Result<HjbSolution> {
    coeffs.check_convexity()?;
    let (value, u_rows, clamped) = backward(coeffs, path, |_, _, _, b2, vx| {
        let br = minimize_control(coeffs, b2 * vx);
        (br.u, br.clamped)
    })?;
    let policy = PolicyField { dt: path.dt, grid: path.grid.clone(), u_values: u_rows, context: format!("best response along a {:?} path", path.method) };
    Ok(HjbSolution { value, policy, clamped })
}

/// Expected cost of a fixed feedback along a frozen measure path.
pub fn policy_value(coeffs: &ModelCoefficients, path: &MeasurePath, policy: &dyn Policy) -> Result<ValueField> {
    let dt = path.dt;
    Ok(backward(coeffs, path, |n, x, mu, _, _| (policy.control(n as f64 * dt, x, mu), false))?.0)
}

#[derive(Debug, Clone)]
pub struct FixedPointResult {
    pub policy: PolicyField,
    pub path: MeasurePath,
    /// max |û − u_com| over the space–time grid, one entry per iteration.
    pub residuals: Vec<f64>,
    pub converged: bool,
    /// Residual grew for five consecutive iterations.
    pub diverged: bool,
    pub clamped: usize,
    pub note: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointOptions {
    pub n_iter: usize,
    pub damping: f64,
    pub tol: f64,
}

/// Damped Picard iteration along the common-noise path `w_path`.
pub fn mfg_fixed_point_per_path(
    coeffs: &ModelCoefficients,
    v0: &GridMeasure,
    w_path: &[f64],
    dt: f64,
    opts: FixedPointOptions,
) -> Result<FixedPointResult> {
    if !(0.0..=1.0).contains(&opts.damping) {
        return Err(Error::Argument(format!("damping {} outside [0, 1]", opts.damping)));
    }
    if opts.n_iter == 0 {
        return Err(Error::Argument("at least one iteration is needed".into()));
    }
    let n_steps = w_path.len() - 1;
    let mut u_com = PolicyField::constant(dt, n_steps.max(1), &v0.grid, 0.0_f64.clamp(coeffs.u_box.0, coeffs.u_box.1));
    let mut residuals = Vec::new();
    let mut converged = false;
    let mut diverged = false;
    let mut rising = 0;
    let mut clamped = 0;
    let mut path = None;
    for _ in 0..opts.n_iter {
        let p = solve_spde(coeffs, &u_com, v0, w_path, dt, SolveOptions::characteristics())?;
        let sol = hjb_backward(coeffs, &p)?;
        clamped = sol.clamped;
        let r = sol.policy.max_diff(&u_com);
        if residuals.last().is_some_and(|prev| r > *prev) {
            rising += 1;
        } else {
            rising = 0;
        }
        residuals.push(r);
        for (row, brow) in u_com.u_values.iter_mut().zip(&sol.policy.u_values) {
            for (u, b) in row.iter_mut().zip(brow) {
                *u = (1.0 - opts.damping) * *u + opts.damping * b;
            }
        }
        path = Some(p);
        if r <= opts.tol {
            converged = true;
            break;
        }
        if rising >= 5 {
            diverged = true;
            break;
        }
    }
    let note = if coeffs.has_common_noise() {
        "per-path value uses the whole W path: the policy anticipates the common noise".to_string()
    } else {
        "no common noise: consistency is exact".to_string()
    };
    u_com.context = note.clone();
    Ok(FixedPointResult { policy: u_com, path: path.expect("at least one iteration"), residuals, converged, diverged, clamped, note })
}

/// The iteration without common noise, where the forward equation is deterministic.
pub fn mfg_fixed_point_deterministic(
    coeffs: &ModelCoefficients,
    v0: &GridMeasure,
    n_steps: usize,
    dt: f64,
    opts: FixedPointOptions,
) -> Result<FixedPointResult> {
    if coeffs.has_common_noise() {
        return Err(Error::Argument("deterministic fixed point needs σ_com ≡ 0".into()));
    }
    mfg_fixed_point_per_path(coeffs, v0, &vec![0.0; n_steps + 1], dt, opts)
}

/// Feedback perturbations of u_com for the ε-Nash probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "param", rename_all = "kebab-case")]
pub enum Deviation {
    Null,
    Shift(f64),
    Scale(f64),
    TimeShift(f64),
}

impl Deviation {
    pub fn label(&self) -> String {
        match self {
            Deviation::Null => "null".into(),
            Deviation::Shift(c) => format!("shift{c:+}"),
            Deviation::Scale(k) => format!("scale{k}"),
            Deviation::TimeShift(tau) => format!("time-shift{tau}"),
        }
    }

    /// ±0.1, ±0.2 shifts, ×0.5 and ×1.5 rescalings, time shift by 0.2.
    pub fn shipped_family() -> Vec<Deviation> {
        vec![
            Deviation::Shift(0.1),
            Deviation::Shift(-0.1),
            Deviation::Shift(0.2),
            Deviation::Shift(-0.2),
            Deviation::Scale(0.5),
            Deviation::Scale(1.5),
            Deviation::TimeShift(0.2),
        ]
    }
}

/// u_com perturbed by a deviation and clamped to the box.
pub struct DeviatedPolicy<'a> {
    pub base: &'a PolicyField,
    pub deviation: Deviation,
    pub u_box: (f64, f64),
    pub horizon: f64,
}

impl Policy for DeviatedPolicy<'_> {
    fn control(&self, t: f64, x: f64, mu: &MeasureRef) -> f64 {
        let (lo, hi) = self.u_box;
        match self.deviation {
            Deviation::Null => self.base.control(t, x, mu),
            Deviation::Shift(c) => (self.base.control(t, x, mu) + c).clamp(lo, hi),
            Deviation::Scale(k) => (k * self.base.control(t, x, mu)).clamp(lo, hi),
            Deviation::TimeShift(tau) => self.base.control((t + tau).min(self.horizon), x, mu).clamp(lo, hi),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NashSetup<'a> {
    pub coeffs: &'a ModelCoefficients,
    pub u_com: &'a PolicyField,
    /// Limit measure path under u_com; deterministic without common noise.
    pub mu_path: &'a MeasurePath,
    pub init_mean: f64,
    pub init_std: f64,
    pub deviations: Vec<Deviation>,
    pub n_list: Vec<usize>,
    pub n_seeds: usize,
    pub seed0: u64,
    pub bootstrap_reps: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct DeviationStat {
    pub deviation: String,
    /// Expected limit gain ∫(V^{u_com} − V^{dev})(0, ·) dμ₀ from the backward equation.
    pub limit_gain: f64,
    /// Control-variate estimate of payoff(u_com) − payoff(deviation) for player 1.
    pub gain: f64,
    pub stderr: f64,
    /// Plain mean of the N-player cost differences, without control variate.
    pub raw_gain: f64,
    pub raw_stderr: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct NashRow {
    pub n: usize,
    /// Family-restricted lower bound on ε(N).
    pub eps_hat: f64,
    /// 97.5% bootstrap quantile of the max over the family.
    pub ci_upper: f64,
    /// max(ε̂, 0) plus the upper half-width: the upper bound on ε̂⁺.
    pub q: f64,
    /// max over the family of |gain − limit gain|: the finite-N discrepancy.
    pub limit_discrepancy: f64,
    pub deviations: Vec<DeviationStat>,
}

/// Per-seed cost differences: `d[n_index][k]` (antithetic pair average) and `c[k]`.
struct SeedSample {
    d: Vec<Vec<f64>>,
    c: Vec<f64>,
}

fn seed_sample(setup: &NashSetup, policies: &[DeviatedPolicy], seed: u64) -> Result<SeedSample> {
    let coeffs = setup.coeffs;
    let dt = setup.mu_path.dt;
    let n_steps = setup.mu_path.n_steps();
    let n_max = *setup.n_list.iter().max().unwrap_or(&1);
    let noise = NoiseBundle::generate(seed, dt, n_steps, n_max);
    let anti = noise.antithetic_rows(1);
    let mut d = Vec::with_capacity(setup.n_list.len());
    for &n in &setup.n_list {
        let mut acc = vec![0.0; policies.len()];
        for (bundle, reflect) in [(&noise, usize::MAX), (&anti, 1)] {
            let nb = bundle.nested(n);
            let x0 = sample_initial(seed, n, setup.init_mean, setup.init_std, reflect);
            let (_, base) = simulate_tagged_pair(coeffs, setup.u_com, setup.u_com, &nb, &x0, None)?;
            for (k, p) in policies.iter().enumerate() {
                let (_, cost) = simulate_tagged_pair(coeffs, p, setup.u_com, &nb, &x0, None)?;
                acc[k] += 0.5 * (base - cost);
            }
        }
        d.push(acc);
    }
    let x01 = sample_initial(seed, 1, setup.init_mean, setup.init_std, usize::MAX)[0];
    let b1 = &noise.b_increments[0];
    let (_, base) = simulate_tagged_limit(coeffs, setup.u_com, &setup.mu_path.slices, dt, b1, &noise.w_increments, x01)?;
    let c = policies
        .iter()
        .map(|p| simulate_tagged_limit(coeffs, p, &setup.mu_path.slices, dt, b1, &noise.w_increments, x01).map(|r| base - r.1))
        .collect::<Result<Vec<_>>>()?;
    Ok(SeedSample { d, c })
}

/// ε̂(N) = max over the family of the estimated gain of a unilateral deviation
/// by player 1, with common random numbers across deviations, antithetic
/// idiosyncratic noise for players 2..N, and the limit tagged cost
/// difference as control variate.
pub fn epsilon_nash_estimate(setup: &NashSetup) -> Result<Vec<NashRow>> {
    if setup.coeffs.has_common_noise() {
        return Err(Error::Argument("the control variate needs a deterministic limit path (σ_com ≡ 0)".into()));
    }
    if setup.n_seeds < 2 || setup.deviations.is_empty() || setup.n_list.is_empty() {
        return Err(Error::Argument("need ≥ 2 seeds, a deviation and an N level".into()));
    }
    let horizon = setup.mu_path.dt * setup.mu_path.n_steps() as f64;
    let policies: Vec<DeviatedPolicy> = setup
        .deviations
        .iter()
        .map(|d| DeviatedPolicy { base: setup.u_com, deviation: *d, u_box: setup.coeffs.u_box, horizon })
        .collect();
    let mu0 = &setup.mu_path.slices[0];
    let base_value = policy_value(setup.coeffs, setup.mu_path, setup.u_com)?.initial_expectation(mu0);
    let limit_gain: Vec<f64> = policies
        .iter()
        .map(|p| policy_value(setup.coeffs, setup.mu_path, p).map(|v| base_value - v.initial_expectation(mu0)))
        .collect::<Result<_>>()?;

    let samples: Vec<SeedSample> = (0..setup.n_seeds)
        .into_par_iter()
        .map(|s| seed_sample(setup, &policies, setup.seed0 + s as u64))
        .collect::<Result<_>>()?;

    let k_dev = policies.len();
    let mut rows = Vec::with_capacity(setup.n_list.len());
    for (ni, &n) in setup.n_list.iter().enumerate() {
        // y[s][k] = D − C per seed.
        let y: Vec<Vec<f64>> = samples.iter().map(|s| (0..k_dev).map(|k| s.d[ni][k] - s.c[k]).collect()).collect();
        let mut stats = Vec::with_capacity(k_dev);
        for k in 0..k_dev {
            let col: Vec<f64> = y.iter().map(|r| r[k]).collect();
            let raw: Vec<f64> = samples.iter().map(|s| s.d[ni][k]).collect();
            let (m, se) = mean_stderr(&col);
            let (rm, rse) = mean_stderr(&raw);
            stats.push(DeviationStat { deviation: setup.deviations[k].label(), limit_gain: limit_gain[k], gain: limit_gain[k] + m, stderr: se, raw_gain: rm, raw_stderr: rse });
        }
        let eps_hat = stats.iter().map(|s| s.gain).fold(f64::NEG_INFINITY, f64::max);
        let ci_upper = bootstrap_quantile(y.len(), setup.bootstrap_reps, 0.975, setup.seed0, STREAM_AUX + ni as u64, |idx| {
            (0..k_dev)
                .map(|k| limit_gain[k] + idx.iter().map(|i| y[*i][k]).sum::<f64>() / idx.len() as f64)
                .fold(f64::NEG_INFINITY, f64::max)
        });
        let q = eps_hat.max(0.0) + (ci_upper - eps_hat).max(0.0);
        let limit_discrepancy = stats.iter().map(|s| (s.gain - s.limit_gain).abs()).fold(0.0, f64::max);
        rows.push(NashRow { n, eps_hat, ci_upper, q, limit_discrepancy, deviations: stats });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Field1, MeanFieldExpr, RunningCost};

    fn lq(kappa: f64) -> ModelCoefficients {
        ModelCoefficients::ou_common(kappa, 0.0)
    }

    #[test]
    fn best_response_examples() {
        let c = lq(1.0);
        let empty = [0.0];
        let mu = MeasureRef::Atoms(&empty);
        assert_eq!(best_response(&c, 0.7, 0.0, &mu).unwrap().u, -0.7);
        let boxed = lq(1.0).with_u_box(-1.0, 1.0);
        let br = best_response(&boxed, -2.0, 0.0, &mu).unwrap();
        assert_eq!(br, BestResponse { u: 1.0, clamped: true });

        let mut quartic = lq(1.0).with_u_box(-3.0, 3.0);
        quartic.running_cost = RunningCost { r: 1.0, q: 0.1, state: MeanFieldExpr::zero() };
        for p in [-5.0, -1.3, -0.2, 0.0, 0.4, 2.5, 9.0] {
            let u = best_response(&quartic, p, 0.0, &mu).unwrap().u;
            // Grid-search oracle over the box.
            let k = 10_000;
            let obj = |v: f64| p * v + quartic.running_cost.control_part(v);
            let best = (0..=k).map(|i| -3.0 + 6.0 * i as f64 / k as f64).min_by(|a, b| obj(*a).total_cmp(&obj(*b))).unwrap();
            assert!((u - best).abs() < 1e-3, "p {p}: {u} vs {best}");
        }
        let mut concave = lq(1.0);
        concave.running_cost.r = -1.0;
        assert!(matches!(best_response(&concave, 0.1, 0.0, &mu), Err(Error::Model(_))));
    }

    fn frozen_path(c: &ModelCoefficients, grid: &Grid1D, dt: f64, n: usize) -> MeasurePath {
        let v0 = GridMeasure::gaussian(grid, 0.0, 1.0);
        solve_spde(c, &crate::policy::ConstPolicy(0.0), &v0, &vec![0.0; n + 1], dt, SolveOptions::ito()).unwrap()
    }

    #[test]
    fn zero_problem_stays_zero() {
        let mut c = lq(0.0);
        c.b1 = MeanFieldExpr::zero();
        c.terminal_cost = MeanFieldExpr::zero();
        let g = Grid1D::new(-4.0, 4.0, 81).unwrap();
        let path = frozen_path(&c, &g, 0.005, 40);
        let sol = hjb_backward(&c, &path).unwrap();
        assert!(sol.value.values.iter().flatten().all(|v| *v == 0.0));
        assert!(sol.policy.u_values.iter().flatten().all(|v| *v == 0.0));
        let fp = mfg_fixed_point_deterministic(&c, &path.slices[0], 40, 0.005, FixedPointOptions { n_iter: 5, damping: 0.5, tol: 1e-12 }).unwrap();
        assert_eq!(fp.residuals, vec![0.0]);
    }

    #[test]
    fn lq_riccati_oracle() {
        // b = −κx + u, J = u²/2, V_T = x²/2: V = ½P(t)x² + r(t) with
        // P′ = 2κP + P², r′ = −½σ²P, P(T) = 1, r(T) = 0.
        let kappa = 1.0;
        let mut c = lq(kappa);
        c.b1 = MeanFieldExpr::field(Field1::affine(0.0, -kappa));
        let t_end = 0.5;
        let mut errs = Vec::new();
        for (n_pts, dt) in [(161, 0.0025), (321, 0.000625)] {
            let g = Grid1D::new(-4.0, 4.0, n_pts).unwrap();
            let n = (t_end / dt as f64).round() as usize;
            let path = frozen_path(&c, &g, dt, n);
            let sol = hjb_backward(&c, &path).unwrap();
            let (mut p, mut r) = (1.0_f64, 0.0_f64);
            let m = 20_000;
            let hs = -t_end / m as f64;
            for _ in 0..m {
                let f = |p: f64| 2.0 * kappa * p + p * p;
                let (k1, l1) = (f(p), -0.5 * p);
                let (k2, l2) = (f(p + 0.5 * hs * k1), -0.5 * (p + 0.5 * hs * k1));
                let (k3, l3) = (f(p + 0.5 * hs * k2), -0.5 * (p + 0.5 * hs * k2));
                let (k4, l4) = (f(p + hs * k3), -0.5 * (p + hs * k3));
                p += hs / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                r += hs / 6.0 * (l1 + 2.0 * l2 + 2.0 * l3 + l4);
            }
            let err = g
                .points()
                .iter()
                .enumerate()
                .filter(|(_, x)| x.abs() <= 2.0)
                .map(|(i, x)| (sol.value.values[0][i] - (0.5 * p * x * x + r)).abs())
                .fold(0.0, f64::max);
            errs.push(err);
            let u_err = g.points().iter().enumerate().filter(|(_, x)| x.abs() <= 2.0).map(|(i, x)| (sol.policy.u_values[0][i] + p * x).abs()).fold(0.0, f64::max);
            assert!(u_err < 0.05, "{u_err}");
        }
        assert!(errs[0] < 0.02, "{errs:?}");
        assert!(errs[1] < errs[0] / 2.0, "{errs:?}");
    }

    #[test]
    fn cost_shift_raises_value() {
        let c = lq(1.0);
        let g = Grid1D::new(-4.0, 4.0, 81).unwrap();
        let path = frozen_path(&c, &g, 0.005, 40);
        let a = hjb_backward(&c, &path).unwrap();
        let mut shifted = c.clone();
        shifted.running_cost.state = MeanFieldExpr::field(Field1::constant(0.3));
        let b = hjb_backward(&shifted, &path).unwrap();
        for (n, (ra, rb)) in a.value.values.iter().zip(&b.value.values).enumerate() {
            let expect = 0.3 * (40 - n) as f64 * 0.005;
            for (va, vb) in ra.iter().zip(rb) {
                assert!((vb - va - expect).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn lq_fixed_point_converges() {
        let c = lq(1.0);
        let g = Grid1D::new(-6.0, 6.0, 121).unwrap();
        let v0 = GridMeasure::gaussian(&g, 0.5, 0.8);
        let dt = 0.005;
        let opts = FixedPointOptions { n_iter: 30, damping: 0.5, tol: 1e-4 };
        let det = mfg_fixed_point_deterministic(&c, &v0, 100, dt, opts).unwrap();
        assert!(det.converged, "{:?}", det.residuals);
        for w in det.residuals.windows(2).skip(2) {
            assert!(w[1] <= w[0]);
        }
        let pp = mfg_fixed_point_per_path(&c, &v0, &vec![0.0; 101], dt, opts).unwrap();
        assert_eq!(pp.residuals, det.residuals);
        assert_eq!(pp.policy.u_values, det.policy.u_values);

        let frozen = mfg_fixed_point_deterministic(&c, &v0, 100, dt, FixedPointOptions { n_iter: 4, damping: 0.0, tol: 0.0 }).unwrap();
        assert!(frozen.residuals.iter().all(|r| *r == frozen.residuals[0]));
    }

    #[test]
    fn null_deviation_is_exactly_zero() {
        let c = lq(1.0);
        let g = Grid1D::new(-6.0, 6.0, 121).unwrap();
        let v0 = GridMeasure::gaussian(&g, 0.5, 0.8);
        let dt = 0.005;
        let fp = mfg_fixed_point_deterministic(&c, &v0, 60, dt, FixedPointOptions { n_iter: 10, damping: 0.5, tol: 1e-6 }).unwrap();
        let setup = NashSetup {
            coeffs: &c,
            u_com: &fp.policy,
            mu_path: &fp.path,
            init_mean: 0.5,
            init_std: 0.8,
            deviations: vec![Deviation::Null],
            n_list: vec![5, 10],
            n_seeds: 4,
            seed0: 3,
            bootstrap_reps: 50,
        };
        let rows = epsilon_nash_estimate(&setup).unwrap();
        for r in &rows {
            assert_eq!(r.eps_hat, 0.0);
            assert_eq!(r.q, 0.0);
        }
    }
}
