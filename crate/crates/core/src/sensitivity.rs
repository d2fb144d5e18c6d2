//! First and second variations of the solution map v₀ ↦ v_t with respect to
//! the initial measure, computed as the exact linearization of the explicit
//! scheme for the transformed density g.
//!
//! With N(g) = ½∂²(σ̃² g) − ∂(b̃[g] g) and g_{n+1} = g_n + dt N(g_n):
//!
//! ```text
//! ξ_{n+1} = ξ_n + dt [ ½∂²(σ̃² ξ) − ∂(b̃ ξ) − ∂(Db̃[ξ] g) ]
//! η_{n+1} = η_n + dt [ ½∂²(σ̃² η) − ∂(b̃ η) − ∂(Db̃[η] g)
//!                     − ∂(Db̃[ξ₁] ξ₂) − ∂(Db̃[ξ₂] ξ₁) − ∂(D²b̃[ξ₁, ξ₂] g) ]
//! ```
//!
//! σ̃² does not depend on g. Db̃ acts through the moments of the mapped
//! measure, evaluated at the physical position y of each g-node. Because the
//! pushforward is linear, the v-level derivatives are pushforwards of these.

use crate::characteristics::{pushforward, transform, Transformed};
use crate::error::{Error, Result};
use crate::grid::{mollified_delta, Grid1D, GridMeasure};
use crate::model::{MeasureRef, ModelCoefficients};
use crate::policy::Policy;
use crate::spde::{flux_divergence, solve_spde_with_flow, MeasurePath, Method, SolveOptions};

/// ξ_t(·; x₀) along a base path.
#[derive(Debug, Clone)]
pub struct SensitivityPath<'a> {
    pub base: &'a MeasurePath,
    /// Physical slices T_{W_t} ξ^g_t.
    pub xi: Vec<GridMeasure>,
    /// Slices of the linearized transformed equation.
    pub xi_g: Vec<GridMeasure>,
    pub bump_point: f64,
    pub bandwidth: f64,
}

fn check_base(base: &MeasurePath, policy: &dyn Policy) -> Result<()> {
    if base.method != Method::Characteristics || base.g_slices.len() != base.slices.len() {
        return Err(Error::Dependency("sensitivity needs a base path solved by the characteristics method".into()));
    }
    if policy.measure_dependent() {
        return Err(Error::Dependency("sensitivity supports measure-free policies only".into()));
    }
    Ok(())
}

fn transform_at(coeffs: &ModelCoefficients, policy: &dyn Policy, base: &MeasurePath, n: usize) -> Result<Transformed> {
    transform(base.flow.as_ref(), coeffs, policy, base.times[n], base.w_path[n], &base.g_slices[n])
}

/// Db̃[ζ] at the g-nodes.
fn drift_variation(coeffs: &ModelCoefficients, tr: &Transformed, g: &GridMeasure, zeta: &GridMeasure) -> Vec<f64> {
    let mu = MeasureRef::Mapped { g, map: &tr.map };
    let z = MeasureRef::Mapped { g: zeta, map: &tr.map };
    let d1 = coeffs.b1.moment_d1(&mu, &z);
    let d2 = coeffs.b2.moment_d1(&mu, &z);
    (0..g.grid.n())
        .map(|j| {
            let y = tr.map[j];
            tr.alpha[j] * (coeffs.b1.variation1(y, &tr.moments.b1, &d1) + tr.u[j] * coeffs.b2.variation1(y, &tr.moments.b2, &d2))
        })
        .collect()
}

/// D²b̃[ζ₁, ζ₂] at the g-nodes.
fn drift_variation2(coeffs: &ModelCoefficients, tr: &Transformed, g: &GridMeasure, z1: &GridMeasure, z2: &GridMeasure) -> Vec<f64> {
    let mu = MeasureRef::Mapped { g, map: &tr.map };
    let r1 = MeasureRef::Mapped { g: z1, map: &tr.map };
    let r2 = MeasureRef::Mapped { g: z2, map: &tr.map };
    let parts = |e: &crate::model::MeanFieldExpr| (e.moment_d1(&mu, &r1), e.moment_d1(&mu, &r2), e.moment_d2(&r1, &r2));
    let (a1, a2, a12) = parts(&coeffs.b1);
    let (c1, c2, c12) = parts(&coeffs.b2);
    (0..g.grid.n())
        .map(|j| {
            let y = tr.map[j];
            tr.alpha[j]
                * (coeffs.b1.variation2(y, &tr.moments.b1, &a1, &a2, &a12)
                    + tr.u[j] * coeffs.b2.variation2(y, &tr.moments.b2, &c1, &c2, &c12))
        })
        .collect()
}

fn add_scaled(acc: &mut [f64], c: f64, v: &[f64]) {
    acc.iter_mut().zip(v).for_each(|(a, b)| *a += c * b);
}

fn to_physical(base: &MeasurePath, n: usize, m: &GridMeasure) -> Result<GridMeasure> {
    match &base.flow {
        Some(ft) => pushforward(ft, m, base.w_path[n]),
        None => Ok(m.clone()),
    }
}

/// ξ for an arbitrary initial perturbation `xi0`.
pub fn solve_xi_from<'a>(
    coeffs: &ModelCoefficients,
    policy: &dyn Policy,
    base: &'a MeasurePath,
    xi0: GridMeasure,
) -> Result<SensitivityPath<'a>> {
    check_base(base, policy)?;
    let grid = &base.grid;
    let dt = base.dt;
    let mut xi_g = Vec::with_capacity(base.slices.len());
    let mut xi = Vec::with_capacity(base.slices.len());
    xi.push(xi0.clone());
    xi_g.push(xi0);
    for n in 0..base.n_steps() {
        let g = &base.g_slices[n];
        let tr = transform_at(coeffs, policy, base, n)?;
        let cur = &xi_g[n];
        let mut next = cur.density.clone();
        add_scaled(&mut next, dt, &flux_divergence(grid, Some(&tr.sigma2), &tr.b_tilde, &cur.density));
        if !coeffs.is_measure_free() {
            let db = drift_variation(coeffs, &tr, g, cur);
            add_scaled(&mut next, dt, &flux_divergence(grid, None, &db, &g.density));
        }
        let next = GridMeasure { grid: grid.clone(), density: next };
        xi.push(to_physical(base, n + 1, &next)?);
        xi_g.push(next);
    }
    Ok(SensitivityPath { base, xi, xi_g, bump_point: f64::NAN, bandwidth: f64::NAN })
}

/// ξ_t(·; x₀) with ξ₀ the mollified point mass at x₀.
pub fn solve_xi<'a>(
    coeffs: &ModelCoefficients,
    policy: &dyn Policy,
    base: &'a MeasurePath,
    x0: f64,
    bandwidth: f64,
) -> Result<SensitivityPath<'a>> {
    let delta = mollified_delta(&base.grid, x0, bandwidth)?;
    let mut p = solve_xi_from(coeffs, policy, base, delta)?;
    p.bump_point = x0;
    p.bandwidth = bandwidth;
    Ok(p)
}

/// η_t(·; x₁, x₂) from two first-order paths on the same base.
pub fn solve_eta(
    coeffs: &ModelCoefficients,
    policy: &dyn Policy,
    base: &MeasurePath,
    xi1: &SensitivityPath,
    xi2: &SensitivityPath,
) -> Result<Vec<GridMeasure>> {
    check_base(base, policy)?;
    if !std::ptr::eq(xi1.base, base) || !std::ptr::eq(xi2.base, base) {
        return Err(Error::Dependency("first-order paths were solved on a different base".into()));
    }
    let grid = &base.grid;
    let dt = base.dt;
    let mut eta_g = GridMeasure::zeros(grid);
    let mut out = Vec::with_capacity(base.slices.len());
    out.push(eta_g.clone());
    for n in 0..base.n_steps() {
        let mut next = eta_g.density.clone();
        if !coeffs.is_measure_free() {
            let g = &base.g_slices[n];
            let tr = transform_at(coeffs, policy, base, n)?;
            let (x1, x2) = (&xi1.xi_g[n], &xi2.xi_g[n]);
            add_scaled(&mut next, dt, &flux_divergence(grid, Some(&tr.sigma2), &tr.b_tilde, &eta_g.density));
            let mut c = drift_variation(coeffs, &tr, g, &eta_g);
            add_scaled(&mut c, 1.0, &drift_variation2(coeffs, &tr, g, x1, x2));
            add_scaled(&mut next, dt, &flux_divergence(grid, None, &c, &g.density));
            add_scaled(&mut next, dt, &flux_divergence(grid, None, &drift_variation(coeffs, &tr, g, x1), &x2.density));
            add_scaled(&mut next, dt, &flux_divergence(grid, None, &drift_variation(coeffs, &tr, g, x2), &x1.density));
        }
        eta_g = GridMeasure { grid: grid.clone(), density: next };
        out.push(to_physical(base, n + 1, &eta_g)?);
    }
    Ok(out)
}

fn perturbed_run(
    coeffs: &ModelCoefficients,
    policy: &dyn Policy,
    base: &MeasurePath,
    v0: &GridMeasure,
) -> Result<Vec<GridMeasure>> {
    let opts = SolveOptions { method: Method::Characteristics, milstein: true };
    Ok(solve_spde_with_flow(coeffs, policy, v0, &base.w_path, base.dt, opts, base.flow.clone())?.slices)
}

fn combine(runs: &[(f64, Vec<GridMeasure>)], scale: f64) -> Vec<GridMeasure> {
    let n = runs[0].1.len();
    (0..n)
        .map(|k| {
            let mut m = GridMeasure::zeros(&runs[0].1[k].grid);
            for (c, r) in runs {
                m = m.axpy(*c * scale, &r[k]);
            }
            m
        })
        .collect()
}

/// (v_t[v₀ + hδ̃] − v_t[v₀ − hδ̃]) / 2h on the W path and flow of `base`.
pub fn xi_fd_oracle(
    coeffs: &ModelCoefficients,
    policy: &dyn Policy,
    base: &MeasurePath,
    x0: f64,
    bandwidth: f64,
    h_bump: f64,
) -> Result<Vec<GridMeasure>> {
    let v0 = &base.slices[0];
    let d = mollified_delta(&base.grid, x0, bandwidth)?;
    let plus = perturbed_run(coeffs, policy, base, &v0.axpy(h_bump, &d))?;
    let minus = perturbed_run(coeffs, policy, base, &v0.axpy(-h_bump, &d))?;
    Ok(combine(&[(1.0, plus), (-1.0, minus)], 0.5 / h_bump))
}

/// Mixed central difference (v[+,+] − v[+,−] − v[−,+] + v[−,−]) / 4h².
pub fn eta_fd_oracle(
    coeffs: &ModelCoefficients,
    policy: &dyn Policy,
    base: &MeasurePath,
    x1: f64,
    x2: f64,
    bandwidth: f64,
    h_bump: f64,
) -> Result<Vec<GridMeasure>> {
    let v0 = &base.slices[0];
    let d1 = mollified_delta(&base.grid, x1, bandwidth)?;
    let d2 = mollified_delta(&base.grid, x2, bandwidth)?;
    let run = |s1: f64, s2: f64| perturbed_run(coeffs, policy, base, &v0.axpy(s1 * h_bump, &d1).axpy(s2 * h_bump, &d2));
    let runs = [(1.0, run(1.0, 1.0)?), (-1.0, run(1.0, -1.0)?), (-1.0, run(-1.0, 1.0)?), (1.0, run(-1.0, -1.0)?)];
    Ok(combine(&runs, 0.25 / (h_bump * h_bump)))
}

/// ‖a − b‖₁ / ‖b‖₁.
pub fn relative_l1(a: &GridMeasure, b: &GridMeasure) -> f64 {
    a.l1_distance(b) / b.total_variation()
}

/// Test functions y^p e^{−y²/2}, y = (x − c)/s, p ∈ {0,1,2,3} at 8 centers
/// spread over the grid, each scaled to C^k norm one.
pub fn dual_dictionary(grid: &Grid1D, k: usize) -> Vec<Vec<f64>> {
    const CENTERS: usize = 8;
    let span = grid.x_max() - grid.x_min();
    let s = span / (2.0 * CENTERS as f64);
    let xs = grid.points();
    let mut out = Vec::with_capacity(4 * CENTERS);
    for ci in 0..CENTERS {
        let c = grid.x_min() + (ci as f64 + 0.5) * span / CENTERS as f64;
        for p in 0..4i32 {
            let jet = |x: f64| {
                let y = (x - c) / s;
                let e = (-0.5 * y * y).exp();
                let pf = p as f64;
                let pw = |q: i32| if q < 0 { 0.0 } else { y.powi(q) };
                let v = pw(p) * e;
                let d1 = (pf * pw(p - 1) - pw(p + 1)) * e / s;
                let d2 = (pf * (pf - 1.0) * pw(p - 2) - (2.0 * pf + 1.0) * pw(p) + pw(p + 2)) * e / (s * s);
                [v, d1, d2]
            };
            let jets: Vec<[f64; 3]> = xs.iter().map(|x| jet(*x)).collect();
            let norm = (0..=k.min(2)).map(|d| jets.iter().fold(0.0_f64, |m, j| m.max(j[d].abs()))).fold(0.0, f64::max);
            out.push(jets.iter().map(|j| j[0] / norm).collect());
        }
    }
    out
}

/// sup over the dictionary of |(φ, m)|: a lower estimate of ‖m‖_{(C^k)′}.
pub fn dual_norm(m: &GridMeasure, dictionary: &[Vec<f64>]) -> f64 {
    dictionary
        .iter()
        .map(|phi| crate::grid::pair(phi, m).map(f64::abs).unwrap_or(f64::NAN))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Field1, MeanFieldExpr};
    use crate::particles::{cumulative, NoiseBundle};
    use crate::policy::{ConstPolicy, MeanReverting};
    use crate::spde::solve_spde;

    const DT: f64 = 0.002;

    fn setup(c: &ModelCoefficients, steps: usize) -> MeasurePath {
        let g = Grid1D::new(-8.0, 8.0, 321).unwrap();
        let v0 = GridMeasure::gaussian(&g, 0.2, 1.0);
        let w = cumulative(&NoiseBundle::common_only(17, DT, steps).w_increments);
        solve_spde(c, &ConstPolicy(0.0), &v0, &w, DT, SolveOptions::characteristics()).unwrap()
    }

    fn frozen() -> ModelCoefficients {
        let mut c = ModelCoefficients::ou_common(1.0, 0.5);
        c.b1 = MeanFieldExpr::field(Field1::affine(0.3, -1.0));
        c
    }

    #[test]
    fn measure_free_drift_gives_the_solver_itself() {
        let c = frozen();
        let base = setup(&c, 100);
        let p = ConstPolicy(0.0);
        let xi = solve_xi(&c, &p, &base, 0.5, 0.2).unwrap();
        let direct = solve_spde_with_flow(
            &c,
            &p,
            &mollified_delta(&base.grid, 0.5, 0.2).unwrap(),
            &base.w_path,
            DT,
            SolveOptions::characteristics(),
            base.flow.clone(),
        )
        .unwrap();
        assert!(xi.xi.last().unwrap().l1_distance(direct.terminal()) < 1e-6);
        let fd = xi_fd_oracle(&c, &p, &base, 0.5, 0.2, 1e-3).unwrap();
        assert!(xi.xi.last().unwrap().l1_distance(fd.last().unwrap()) < 1e-4);
        let xi2 = solve_xi(&c, &p, &base, -0.4, 0.2).unwrap();
        let eta = solve_eta(&c, &p, &base, &xi, &xi2).unwrap();
        assert!(eta.iter().all(|m| m.total_variation() < 1e-8));
    }

    #[test]
    fn ou_common_mean_of_xi() {
        let kappa = 1.0;
        let a = 0.5;
        let c = ModelCoefficients::ou_common(kappa, a);
        let steps = 250;
        let base = setup(&c, steps);
        let p = ConstPolicy(0.0);
        let xi = solve_xi(&c, &p, &base, 0.5, 0.2).unwrap();
        for m in &xi.xi_g {
            assert!((m.mass() - 1.0).abs() < 1e-6);
        }
        // d/dh of the mean under v₀ + hδ̃: dy = κ m dt + a dW, m_t = m₀ + aW_t.
        let m0 = base.slices[0].moment(1);
        let x0m = xi.xi[0].moment(1);
        let riemann: f64 = base.w_path[..steps].iter().map(|w| (m0 + a * w) * DT).sum();
        let oracle = x0m + kappa * riemann + a * base.w_path[steps];
        assert!((xi.xi.last().unwrap().moment(1) - oracle).abs() < 1e-3);

        let fd = xi_fd_oracle(&c, &p, &base, 0.5, 0.2, 1e-3).unwrap();
        let gap = relative_l1(xi.xi.last().unwrap(), fd.last().unwrap());
        assert!(gap < 1e-2, "{gap}");

        // Linear in the bump.
        let d = mollified_delta(&base.grid, 0.5, 0.2).unwrap();
        let xi3 = solve_xi_from(&c, &p, &base, d.scaled(3.0)).unwrap();
        let last = xi.xi_g.last().unwrap().scaled(3.0);
        assert!(xi3.xi_g.last().unwrap().l1_distance(&last) < 1e-12);
    }

    #[test]
    fn eta_symmetry_mass_and_oracle() {
        let mut c = ModelCoefficients::ou_common(1.0, 0.5);
        // A nonlinear measure dependence: + 0.3 · (variance)
        c.b1 = c.b1.clone().plus(Field1::constant(0.3), Some(crate::model::MomentFunctional::pair_half_sq_diff()), crate::model::Link::Identity);
        let base = setup(&c, 100);
        let p = ConstPolicy(0.1);
        let base = {
            let w = base.w_path.clone();
            solve_spde(&c, &p, &base.slices[0], &w, DT, SolveOptions::characteristics()).unwrap()
        };
        let a = solve_xi(&c, &p, &base, 0.6, 0.2).unwrap();
        let b = solve_xi(&c, &p, &base, -0.5, 0.2).unwrap();
        let e12 = solve_eta(&c, &p, &base, &a, &b).unwrap();
        let e21 = solve_eta(&c, &p, &base, &b, &a).unwrap();
        let t12 = e12.last().unwrap();
        assert!(t12.l1_distance(e21.last().unwrap()) < 1e-6);
        assert!(t12.mass().abs() < 1e-6);
        let fd = eta_fd_oracle(&c, &p, &base, 0.6, -0.5, 0.2, 1e-2).unwrap();
        let gap = relative_l1(t12, fd.last().unwrap());
        assert!(gap < 5e-2, "{gap}");
        let fd2 = eta_fd_oracle(&c, &p, &base, 0.6, -0.5, 0.2, 5e-3).unwrap();
        assert!(relative_l1(t12, fd2.last().unwrap()) < gap);
    }

    #[test]
    fn dependency_errors() {
        let c = ModelCoefficients::ou_common(1.0, 0.5);
        let g = Grid1D::new(-8.0, 8.0, 161).unwrap();
        let v0 = GridMeasure::gaussian(&g, 0.0, 1.0);
        let ito = solve_spde(&c, &ConstPolicy(0.0), &v0, &[0.0, 0.01], 0.002, SolveOptions::ito()).unwrap();
        assert!(matches!(solve_xi(&c, &ConstPolicy(0.0), &ito, 0.0, 0.2), Err(Error::Dependency(_))));
        let ch = solve_spde(&c, &ConstPolicy(0.0), &v0, &[0.0, 0.01], 0.002, SolveOptions::characteristics()).unwrap();
        assert!(matches!(solve_xi(&c, &MeanReverting(1.0), &ch, 0.0, 0.2), Err(Error::Dependency(_))));
    }

    #[test]
    fn dictionary_norms() {
        let g = Grid1D::new(-8.0, 8.0, 321).unwrap();
        let dict = dual_dictionary(&g, 2);
        assert_eq!(dict.len(), 32);
        let d = mollified_delta(&g, 0.3, 0.2).unwrap();
        let n = dual_norm(&d, &dict);
        assert!(n > 0.0 && n <= 1.0 + 1e-12);
    }
}
