//! The N-player system under feedback controls, explicit Euler–Maruyama with
//! the empirical measure frozen at the start of each step:
//!
//! ```text
//! X^i ← X^i + b(X^i, μ^N, u^i) dt + σ_ind(X^i) ΔB^i + σ_com(X^i) ΔW
//! ```
//!
//! Drift moments are evaluated on the atomic empirical measure. Policies that
//! read the measure receive its smoothed version on a grid.

use crate::error::{Error, Result};
use crate::grid::{empirical_to_grid, Grid1D, GridMeasure};
use crate::model::{MeasureRef, ModelCoefficients};
use crate::policy::Policy;
use crate::rng::{fill_normals, normal_at, STREAM_B, STREAM_INIT, STREAM_W};
use std::fmt::Write as _;

/// Common and idiosyncratic Brownian increments on a uniform time mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBundle {
    pub dt: f64,
    pub n_steps: usize,
    pub w_increments: Vec<f64>,
    /// Row i drives particle i; rows are nested across particle counts.
    pub b_increments: Vec<Vec<f64>>,
    pub seed: u64,
}

impl NoiseBundle {
    pub fn generate(seed: u64, dt: f64, n_steps: usize, n_particles: usize) -> Self {
        let sq = dt.sqrt();
        let mut w = vec![0.0; n_steps];
        fill_normals(seed, STREAM_W, 0, &mut w);
        w.iter_mut().for_each(|v| *v *= sq);
        let b = (0..n_particles)
            .map(|i| {
                let mut row = vec![0.0; n_steps];
                fill_normals(seed, STREAM_B + i as u64, 0, &mut row);
                row.iter_mut().for_each(|v| *v *= sq);
                row
            })
            .collect();
        Self { dt, n_steps, w_increments: w, b_increments: b, seed }
    }

    /// Common increments only.
    pub fn common_only(seed: u64, dt: f64, n_steps: usize) -> Self {
        Self::generate(seed, dt, n_steps, 0)
    }

    pub fn n_particles(&self) -> usize {
        self.b_increments.len()
    }

    /// First `n` idiosyncratic rows.
    pub fn nested(&self, n: usize) -> Self {
        Self { b_increments: self.b_increments[..n].to_vec(), ..self.clone() }
    }

    /// Rows `from..` negated: the antithetic partner for those particles.
    pub fn antithetic_rows(&self, from: usize) -> Self {
        let mut out = self.clone();
        for row in out.b_increments.iter_mut().skip(from) {
            row.iter_mut().for_each(|v| *v = -*v);
        }
        out
    }

    /// Same Brownian paths on a mesh twice as coarse.
    pub fn coarsened(&self) -> Self {
        let pair = |v: &Vec<f64>| v.chunks(2).map(|c| c.iter().sum()).collect::<Vec<f64>>();
        Self {
            dt: 2.0 * self.dt,
            n_steps: self.n_steps.div_ceil(2),
            w_increments: pair(&self.w_increments),
            b_increments: self.b_increments.iter().map(pair).collect(),
            seed: self.seed,
        }
    }

    /// W at the mesh points, starting from W_0 = 0.
    pub fn w_path(&self) -> Vec<f64> {
        cumulative(&self.w_increments)
    }
}

pub fn cumulative(increments: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(increments.len() + 1);
    let mut acc = 0.0;
    out.push(0.0);
    for d in increments {
        acc += d;
        out.push(acc);
    }
    out
}

/// Initial positions `mean + std·Z_i`, with Z_i on stream `STREAM_INIT + i`.
/// Positions with index ≥ `reflect_from` use −Z_i.
pub fn sample_initial(seed: u64, n: usize, mean: f64, std: f64, reflect_from: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            let z = normal_at(seed, STREAM_INIT + i as u64, 0);
            mean + std * if i >= reflect_from { -z } else { z }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub positions: Vec<f64>,
    pub t: f64,
}

/// Grid and bandwidth on which measure-reading policies see the crowd.
#[derive(Debug, Clone)]
pub struct Smoothing {
    pub grid: Grid1D,
    pub bandwidth: f64,
}

/// Control sources: player 1 may use its own policy.
#[derive(Clone, Copy)]
pub struct Controls<'a> {
    pub common: &'a dyn Policy,
    pub tagged: Option<&'a dyn Policy>,
}

impl<'a> Controls<'a> {
    pub fn symmetric(p: &'a dyn Policy) -> Self {
        Self { common: p, tagged: None }
    }
    fn for_particle(&self, i: usize) -> &'a dyn Policy {
        match (i, self.tagged) {
            (0, Some(p)) => p,
            _ => self.common,
        }
    }
    fn measure_dependent(&self) -> bool {
        self.common.measure_dependent() || self.tagged.is_some_and(|p| p.measure_dependent())
    }
}

/// Measure view for policies plus the number of clamped positions.
fn policy_measure(positions: &[f64], controls: &Controls, smoothing: Option<&Smoothing>) -> Result<(Option<GridMeasure>, usize)> {
    if !controls.measure_dependent() {
        return Ok((None, 0));
    }
    let s = smoothing.ok_or_else(|| Error::Argument("measure-dependent policy needs a smoothing grid".into()))?;
    let (m, c) = empirical_to_grid(positions, &s.grid, s.bandwidth)?;
    Ok((Some(m), c))
}

/// Controls of all particles at the current state.
fn controls_at(positions: &[f64], t: f64, controls: &Controls, smoothed: Option<&GridMeasure>) -> Vec<f64> {
    let mu = match smoothed {
        Some(m) => MeasureRef::Grid(m),
        None => MeasureRef::Atoms(positions),
    };
    positions.iter().enumerate().map(|(i, x)| controls.for_particle(i).control(t, *x, &mu)).collect()
}

fn advance(
    positions: &[f64],
    coeffs: &ModelCoefficients,
    u: &[f64],
    noise: &NoiseBundle,
    step: usize,
) -> Result<Vec<f64>> {
    let dm = coeffs.drift_moments(&MeasureRef::Atoms(positions));
    let dw = noise.w_increments[step];
    let dt = noise.dt;
    let mut out = Vec::with_capacity(positions.len());
    for (i, &x) in positions.iter().enumerate() {
        coeffs.check_control(u[i])?;
        let b = coeffs.drift_with(x, &dm, u[i]);
        let nx = x + b * dt + coeffs.sigma_ind.value(x) * noise.b_increments[i][step] + coeffs.sigma_com.value(x) * dw;
        if !nx.is_finite() {
            return Err(Error::Divergence { particle: i, step });
        }
        out.push(nx);
    }
    Ok(out)
}

/// One explicit step.
pub fn step_particles(
    ens: &ParticleEnsemble,
    coeffs: &ModelCoefficients,
    controls: Controls,
    noise: &NoiseBundle,
    step: usize,
    smoothing: Option<&Smoothing>,
) -> Result<ParticleEnsemble> {
    if step >= noise.n_steps {
        return Err(Error::Argument(format!("step {step} beyond the {} steps of the noise", noise.n_steps)));
    }
    if noise.n_particles() < ens.positions.len() {
        return Err(Error::Dimension { expected: ens.positions.len(), got: noise.n_particles() });
    }
    let (smoothed, _) = policy_measure(&ens.positions, &controls, smoothing)?;
    let u = controls_at(&ens.positions, ens.t, &controls, smoothed.as_ref());
    let positions = advance(&ens.positions, coeffs, &u, noise, step)?;
    Ok(ParticleEnsemble { positions, t: (step + 1) as f64 * noise.dt })
}

/// Positions at every mesh time plus the running cost of particle 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub states: Vec<Vec<f64>>,
    /// Left-endpoint Riemann sum of particle 1's running cost.
    pub running_cost_1: f64,
    pub clamped: usize,
}

impl Trajectory {
    pub fn final_positions(&self) -> &[f64] {
        self.states.last().expect("trajectory has an initial state")
    }

    /// Long-format CSV `step,t,particle,x`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,t,particle,x\n");
        for (n, st) in self.states.iter().enumerate() {
            for (i, x) in st.iter().enumerate() {
                let _ = writeln!(s, "{n},{},{i},{x}", n as f64 * self.dt);
            }
        }
        s
    }
}

/// Full trajectory from `x0`; deterministic given the noise.
pub fn simulate(
    coeffs: &ModelCoefficients,
    controls: Controls,
    noise: &NoiseBundle,
    x0: &[f64],
    smoothing: Option<&Smoothing>,
) -> Result<Trajectory> {
    if x0.is_empty() {
        return Err(Error::Argument("ensemble of zero particles".into()));
    }
    if noise.n_particles() < x0.len() {
        return Err(Error::Dimension { expected: x0.len(), got: noise.n_particles() });
    }
    let mut states = Vec::with_capacity(noise.n_steps + 1);
    states.push(x0.to_vec());
    let mut cost = 0.0;
    let mut clamped = 0;
    for n in 0..noise.n_steps {
        let cur = &states[n];
        let t = n as f64 * noise.dt;
        let (smoothed, c) = policy_measure(cur, &controls, smoothing)?;
        clamped += c;
        let u = controls_at(cur, t, &controls, smoothed.as_ref());
        let sm = coeffs.running_cost.state.moments(&MeasureRef::Atoms(cur));
        cost += noise.dt * coeffs.running_cost.eval(cur[0], &sm, u[0]);
        let next = advance(cur, coeffs, &u, noise, n)?;
        states.push(next);
    }
    Ok(Trajectory { dt: noise.dt, states, running_cost_1: cost, clamped })
}

pub fn simulate_ensemble(
    coeffs: &ModelCoefficients,
    policy: &dyn Policy,
    noise: &NoiseBundle,
    x0: &[f64],
    smoothing: Option<&Smoothing>,
) -> Result<Trajectory> {
    simulate(coeffs, Controls::symmetric(policy), noise, x0, smoothing)
}

/// Σ J(X¹_n, μ_n, u¹_n) dt over the mesh plus V_T(X¹_T, μ_T).
pub fn payoff_tagged(coeffs: &ModelCoefficients, traj: &Trajectory, policy_1: &dyn Policy, smoothing: Option<&Smoothing>) -> Result<f64> {
    let ctrl = Controls::symmetric(policy_1);
    let mut cost = 0.0;
    for (n, st) in traj.states.iter().take(traj.states.len() - 1).enumerate() {
        let (smoothed, _) = policy_measure(st, &ctrl, smoothing)?;
        let mu = match &smoothed {
            Some(m) => MeasureRef::Grid(m),
            None => MeasureRef::Atoms(st),
        };
        let u = policy_1.control(n as f64 * traj.dt, st[0], &mu);
        let sm = coeffs.running_cost.state.moments(&MeasureRef::Atoms(st));
        cost += traj.dt * coeffs.running_cost.eval(st[0], &sm, u);
    }
    Ok(cost + terminal_cost_1(coeffs, traj))
}

fn terminal_cost_1(coeffs: &ModelCoefficients, traj: &Trajectory) -> f64 {
    let last = traj.final_positions();
    coeffs.terminal_cost.eval_at(last[0], &MeasureRef::Atoms(last))
}

/// Player 1 on `u_ind`, players 2..N on `u_com`; returns the trajectory and
/// player 1's realized cost.
pub fn simulate_tagged_pair(
    coeffs: &ModelCoefficients,
    u_ind: &dyn Policy,
    u_com: &dyn Policy,
    noise: &NoiseBundle,
    x0: &[f64],
    smoothing: Option<&Smoothing>,
) -> Result<(Trajectory, f64)> {
    let traj = simulate(coeffs, Controls { common: u_com, tagged: Some(u_ind) }, noise, x0, smoothing)?;
    let cost = traj.running_cost_1 + terminal_cost_1(coeffs, &traj);
    Ok((traj, cost))
}

/// A single tagged player against a given measure path (slices at the mesh
/// times), driven by idiosyncratic row `b` and common increments `w`.
/// Returns the path of the player and its realized cost.
pub fn simulate_tagged_limit(
    coeffs: &ModelCoefficients,
    u_ind: &dyn Policy,
    slices: &[GridMeasure],
    dt: f64,
    b: &[f64],
    w: &[f64],
    x0: f64,
) -> Result<(Vec<f64>, f64)> {
    let n_steps = w.len();
    if slices.len() != n_steps + 1 || b.len() != n_steps {
        return Err(Error::Dimension { expected: n_steps + 1, got: slices.len() });
    }
    let mut x = x0;
    let mut path = Vec::with_capacity(n_steps + 1);
    path.push(x);
    let mut cost = 0.0;
    for n in 0..n_steps {
        let mu = MeasureRef::Grid(&slices[n]);
        let u = u_ind.control(n as f64 * dt, x, &mu);
        coeffs.check_control(u)?;
        let sm = coeffs.running_cost.state.moments(&mu);
        cost += dt * coeffs.running_cost.eval(x, &sm, u);
        let dm = coeffs.drift_moments(&mu);
        x += coeffs.drift_with(x, &dm, u) * dt + coeffs.sigma_ind.value(x) * b[n] + coeffs.sigma_com.value(x) * w[n];
        if !x.is_finite() {
            return Err(Error::Divergence { particle: 0, step: n });
        }
        path.push(x);
    }
    cost += coeffs.terminal_cost.eval_at(x, &MeasureRef::Grid(&slices[n_steps]));
    Ok((path, cost))
}
