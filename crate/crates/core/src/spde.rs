//! Finite-volume solvers for the McKean–Vlasov SPDE
//!
//! ```text
//! dμ = L′μ dt − ∂_x(σ_com μ) dW,    L′μ = ½∂²_x[(σ_ind² + σ_com²) μ] − ∂_x[b μ]
//! ```
//!
//! Node j owns the cell of width w_j (h inside, h/2 at the two ends), so the
//! trapezoid mass Σ w_j μ_j telescopes to zero flux at the walls:
//!
//! ```text
//! F_{j+1/2} = ½(b_j μ_j + b_{j+1} μ_{j+1}) − ½(D_{j+1} μ_{j+1} − D_j μ_j)/h
//! (L′μ)_j   = −(F_{j+1/2} − F_{j−1/2}) / w_j,     F_{−1/2} = F_{n−1/2} = 0
//! ```
//!
//! With this flux Σ w_j x_j (L′μ)_j equals the trapezoid ∫bμ up to wall terms,
//! so linear moment dynamics are reproduced to rounding.

use crate::characteristics::{build_flow_padded, pushforward, transform, FlowTable};
use crate::error::{Error, Result};
use crate::grid::{Grid1D, GridMeasure};
use crate::model::{MeasureRef, ModelCoefficients};
use crate::policy::Policy;
use serde::Serialize;
use std::fmt::Write as _;

/// Per-step mass drift allowed, relative to max(1, total variation).
const STEP_MASS_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ito,
    Characteristics,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub method: Method,
    /// Milstein correction in the Itô scheme.
    pub milstein: bool,
}

impl SolveOptions {
    pub fn ito() -> Self {
        Self { method: Method::Ito, milstein: true }
    }
    pub fn characteristics() -> Self {
        Self { method: Method::Characteristics, milstein: true }
    }
}

/// Solution slices at the mesh times 0, dt, …, n·dt.
#[derive(Debug, Clone)]
pub struct MeasurePath {
    pub grid: Grid1D,
    pub dt: f64,
    pub times: Vec<f64>,
    /// μ_t; for the characteristics method v_t = T_{W_t} g_t.
    pub slices: Vec<GridMeasure>,
    /// g_t of the transformed equation; empty for the Itô method.
    pub g_slices: Vec<GridMeasure>,
    pub w_path: Vec<f64>,
    pub method: Method,
    pub flow: Option<FlowTable>,
    /// max |c − 1| over the rescalings c that give each physical slice the
    /// exact mass of its g slice; interpolation in the remap is not conservative.
    pub remap_correction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SliceSummary {
    pub t: f64,
    pub mass: f64,
    pub mean: f64,
    pub second_moment: f64,
    pub negative_mass: f64,
}

impl MeasurePath {
    pub fn n_steps(&self) -> usize {
        self.slices.len() - 1
    }

    pub fn terminal(&self) -> &GridMeasure {
        self.slices.last().expect("path has an initial slice")
    }

    pub fn summaries(&self) -> Vec<SliceSummary> {
        self.times
            .iter()
            .zip(&self.slices)
            .map(|(t, m)| SliceSummary { t: *t, mass: m.mass(), mean: m.moment(1), second_moment: m.moment(2), negative_mass: m.negative_mass() })
            .collect()
    }

    /// Long-format CSV `t,x,density`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,x,density\n");
        for (t, m) in self.times.iter().zip(&self.slices) {
            for (i, d) in m.density.iter().enumerate() {
                let _ = writeln!(s, "{t},{},{d}", self.grid.x(i));
            }
        }
        s
    }

    pub fn max_mass_error(&self) -> f64 {
        self.slices.iter().map(|m| (m.mass() - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn max_negative_mass(&self) -> f64 {
        self.slices.iter().map(|m| m.negative_mass()).fold(0.0, f64::max)
    }
}

/// Cell widths of the finite-volume partition.
fn cell_width(grid: &Grid1D, j: usize) -> f64 {
    grid.weight(j)
}

/// −∂_x(b μ) + ½∂²_x(D μ) in flux form; `d = None` means no diffusion.
pub(crate) fn flux_divergence(grid: &Grid1D, d: Option<&[f64]>, b: &[f64], mu: &[f64]) -> Vec<f64> {
    let n = grid.n();
    let h = grid.h();
    let mut flux = vec![0.0; n - 1];
    for j in 0..n - 1 {
        let mut f = 0.5 * (b[j] * mu[j] + b[j + 1] * mu[j + 1]);
        if let Some(d) = d {
            f -= 0.5 * (d[j + 1] * mu[j + 1] - d[j] * mu[j]) / h;
        }
        flux[j] = f;
    }
    let mut out = vec![0.0; n];
    for j in 0..n {
        let right = if j + 1 < n { flux[j] } else { 0.0 };
        let left = if j > 0 { flux[j - 1] } else { 0.0 };
        out[j] = -(right - left) / cell_width(grid, j);
    }
    out
}

/// ∂_x(a ∂_x(a μ)) with the compact stencil and a averaged to half nodes.
pub(crate) fn milstein_term(grid: &Grid1D, a: &[f64], mu: &[f64]) -> Vec<f64> {
    let n = grid.n();
    let h = grid.h();
    let g: Vec<f64> = (0..n - 1).map(|j| 0.5 * (a[j] + a[j + 1]) * (a[j + 1] * mu[j + 1] - a[j] * mu[j]) / h).collect();
    (0..n)
        .map(|j| {
            let right = if j + 1 < n { g[j] } else { 0.0 };
            let left = if j > 0 { g[j - 1] } else { 0.0 };
            (right - left) / cell_width(grid, j)
        })
        .collect()
}

/// Drift values b(x_j, μ, u(t, x_j, μ)) on the grid.
fn drift_on_grid(coeffs: &ModelCoefficients, policy: &dyn Policy, t: f64, mu: &GridMeasure) -> Result<Vec<f64>> {
    let mref = MeasureRef::Grid(mu);
    let dm = coeffs.drift_moments(&mref);
    mu.grid
        .points()
        .into_iter()
        .map(|x| {
            let u = policy.control(t, x, &mref);
            coeffs.check_control(u)?;
            Ok(coeffs.drift_with(x, &dm, u))
        })
        .collect()
}

pub(crate) fn check_cfl(grid: &Grid1D, dt: f64, d: &[f64], b: &[f64]) -> Result<()> {
    let h = grid.h();
    let dmax = d.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let bmax = b.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if dmax > 0.0 && dt > h * h / dmax * (1.0 + 1e-12) {
        return Err(Error::Stability(format!("dt = {dt} exceeds h²/max D = {}", h * h / dmax)));
    }
    if bmax > 0.0 && dt > h / bmax * (1.0 + 1e-12) {
        return Err(Error::Stability(format!("dt = {dt} exceeds h/max|b| = {}", h / bmax)));
    }
    Ok(())
}

fn check_step_mass(before: &GridMeasure, after: &GridMeasure) -> Result<()> {
    let drift = (after.mass() - before.mass()).abs();
    if !(drift <= STEP_MASS_TOL * before.total_variation().max(1.0)) {
        return Err(Error::Conservation(format!("mass changed by {drift} in one step")));
    }
    Ok(())
}

/// L′μ on the grid of μ with zero-flux walls.
pub fn apply_l_prime(coeffs: &ModelCoefficients, policy: &dyn Policy, t: f64, mu: &GridMeasure) -> Result<GridMeasure> {
    let b = drift_on_grid(coeffs, policy, t, mu)?;
    let d: Vec<f64> = mu.grid.points().iter().map(|x| coeffs.sigma_tot2(*x)).collect();
    Ok(GridMeasure { grid: mu.grid.clone(), density: flux_divergence(&mu.grid, Some(&d), &b, &mu.density) })
}

/// μ + dt L′μ − ΔW ∂(σ_com μ) [+ ½(ΔW² − dt) ∂(σ_com ∂(σ_com μ))].
pub fn step_ito(
    coeffs: &ModelCoefficients,
    policy: &dyn Policy,
    mu: &GridMeasure,
    t: f64,
    dw: f64,
    dt: f64,
    milstein: bool,
) -> Result<GridMeasure> {
    let grid = &mu.grid;
    let b = drift_on_grid(coeffs, policy, t, mu)?;
    let xs = grid.points();
    let d: Vec<f64> = xs.iter().map(|x| coeffs.sigma_tot2(*x)).collect();
    check_cfl(grid, dt, &d, &b)?;
    let lp = flux_divergence(grid, Some(&d), &b, &mu.density);
    let mut out: Vec<f64> = mu.density.iter().zip(&lp).map(|(m, l)| m + dt * l).collect();
    if coeffs.has_common_noise() {
        let a: Vec<f64> = xs.iter().map(|x| coeffs.sigma_com.value(*x)).collect();
        let transport = flux_divergence(grid, None, &a, &mu.density);
        out.iter_mut().zip(&transport).for_each(|(o, v)| *o += dw * v);
        if milstein {
            let c = 0.5 * (dw * dw - dt);
            let m = milstein_term(grid, &a, &mu.density);
            out.iter_mut().zip(&m).for_each(|(o, v)| *o += c * v);
        }
    }
    let next = GridMeasure { grid: grid.clone(), density: out };
    check_step_mass(mu, &next)?;
    Ok(next)
}

/// One explicit step of ∂_t g = ½∂²(σ̃² g) − ∂(b̃ g) with coefficients frozen
/// at (t, W_t, g).
pub fn step_characteristics(
    coeffs: &ModelCoefficients,
    policy: &dyn Policy,
    flow: Option<&FlowTable>,
    g: &GridMeasure,
    t: f64,
    w: f64,
    dt: f64,
) -> Result<GridMeasure> {
    let tr = transform(flow, coeffs, policy, t, w, g)?;
    check_cfl(&g.grid, dt, &tr.sigma2, &tr.b_tilde)?;
    let lp = flux_divergence(&g.grid, Some(&tr.sigma2), &tr.b_tilde, &g.density);
    let next = GridMeasure { grid: g.grid.clone(), density: g.density.iter().zip(&lp).map(|(m, l)| m + dt * l).collect() };
    check_step_mass(g, &next)?;
    Ok(next)
}

/// Flow table wide enough for every |W_t| on the path; `None` without common noise.
pub fn flow_for_path(coeffs: &ModelCoefficients, grid: &Grid1D, w_path: &[f64]) -> Result<Option<FlowTable>> {
    if !coeffs.has_common_noise() {
        return Ok(None);
    }
    let w_max = w_path.iter().fold(0.0_f64, |m, w| m.max(w.abs()));
    let a = &coeffs.sigma_com;
    let a_grid = grid.points().iter().fold(0.0_f64, |m, x| m.max(a.value(*x).abs()));
    let probe = grid.padded(2.0 * w_max * a_grid + 1.0);
    let a_max = probe.points().iter().fold(0.0_f64, |m, x| m.max(a.value(*x).abs()));
    build_flow_padded(a, grid, 1.25 * w_max * a_max + 8.0 * grid.h()).map(Some)
}

/// Solves from `v0` along the common-noise path `w_path` (values at the mesh
/// times, `w_path[0] = 0`).
pub fn solve_spde(
    coeffs: &ModelCoefficients,
    policy: &dyn Policy,
    v0: &GridMeasure,
    w_path: &[f64],
    dt: f64,
    opts: SolveOptions,
) -> Result<MeasurePath> {
    let flow = match opts.method {
        Method::Characteristics => flow_for_path(coeffs, &v0.grid, w_path)?,
        Method::Ito => None,
    };
    solve_spde_with_flow(coeffs, policy, v0, w_path, dt, opts, flow)
}

/// As `solve_spde` with a prebuilt flow table for the characteristics method.
pub fn solve_spde_with_flow(
    coeffs: &ModelCoefficients,
    policy: &dyn Policy,
    v0: &GridMeasure,
    w_path: &[f64],
    dt: f64,
    opts: SolveOptions,
    flow: Option<FlowTable>,
) -> Result<MeasurePath> {
    if w_path.is_empty() {
        return Err(Error::Argument("empty W path".into()));
    }
    if w_path[0] != 0.0 {
        return Err(Error::Argument(format!("W path must start at 0, got {}", w_path[0])));
    }
    if !(dt > 0.0) {
        return Err(Error::Argument(format!("time step {dt} must be positive")));
    }
    let n_steps = w_path.len() - 1;
    let times: Vec<f64> = (0..=n_steps).map(|n| n as f64 * dt).collect();
    let mut slices = Vec::with_capacity(n_steps + 1);
    let mut g_slices = Vec::new();
    let mut remap_correction = 0.0;
    match opts.method {
        Method::Ito => {
            slices.push(v0.clone());
            for n in 0..n_steps {
                let next = step_ito(coeffs, policy, &slices[n], times[n], w_path[n + 1] - w_path[n], dt, opts.milstein)?;
                slices.push(next);
            }
        }
        Method::Characteristics => {
            let ft = flow.as_ref();
            let mut correction = 0.0_f64;
            // g_0 = v_0 since W_0 = 0.
            g_slices.push(v0.clone());
            slices.push(v0.clone());
            for n in 0..n_steps {
                let next = step_characteristics(coeffs, policy, ft, &g_slices[n], times[n], w_path[n], dt)?;
                let v = match ft {
                    Some(ft) => {
                        let raw = pushforward(ft, &next, w_path[n + 1])?;
                        let raw_mass = raw.mass();
                        if raw_mass != 0.0 {
                            let c = next.mass() / raw_mass;
                            correction = correction.max((c - 1.0).abs());
                            raw.scaled(c)
                        } else {
                            raw
                        }
                    }
                    None => next.clone(),
                };
                g_slices.push(next);
                slices.push(v);
            }
            remap_correction = correction;
        }
    }
    Ok(MeasurePath { grid: v0.grid.clone(), dt, times, slices, g_slices, w_path: w_path.to_vec(), method: opts.method, flow, remap_correction })
}
