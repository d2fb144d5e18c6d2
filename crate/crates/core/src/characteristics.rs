//! One-dimensional stochastic characteristics for the common-noise transport.
//!
//! ```text
//! Φ(y) = ∫_0^y dz / A(z)
//! Y(t, x) = Φ⁻¹(Φ(x) − t)          solves  Ẏ = −A(Y), Y(0, x) = x
//! ∂_x Y(t, x) = A(Y) / A(x)
//! ∂²_x Y(t, x) = A(Y) (A′(Y) − A′(x)) / A(x)²
//! ```
//!
//! `pushforward(v, s)` transports a density along ẋ = +A for time s:
//!
//! ```text
//! (T_s v)(z) = v(Y(s, z)) ∂_z Y(s, z),    (φ, T_s v) = (φ ∘ Y(−s, ·), v)
//! ```
//!
//! which is the solution operator of ∂_s v = −∂_x(A v). With v = T_W g the
//! Stratonovich equation dv = L_St′ v dt − ∂_x(A v)∘dW becomes the random PDE
//! ∂_t g = ½∂²(σ̃² g) − ∂(b̃ g) with, at z = Y(−W, x),
//!
//! ```text
//! σ̃²(x) = σ_ind²(z) (A(x)/A(z))²
//! b̃(x)  = (A(x)/A(z)) [b(z, T_W g) − ½ A A′(z)] + ½ σ_ind²(z) A(x)(A′(x) − A′(z)) / A(z)²
//! ```

use crate::error::{Error, Result};
use crate::grid::{Grid1D, GridMeasure};
use crate::interp::Hermite;
use crate::model::{DriftMoments, Field1, MeasureRef, ModelCoefficients};
use crate::policy::Policy;

#[derive(Debug, Clone)]
pub struct FlowTable {
    pub grid: Grid1D,
    pub padded: Grid1D,
    pub a: Field1,
    pub a_values: Vec<f64>,
    pub phi_values: Vec<f64>,
    phi: Hermite,
}

/// Builds Φ on the working grid enlarged by `multiplier · √T · max A`.
pub fn build_flow(coeffs: &ModelCoefficients, grid: &Grid1D, horizon: f64, multiplier: f64) -> Result<FlowTable> {
    let a = coeffs.sigma_com.clone();
    let a_max = grid.points().iter().map(|x| a.value(*x).abs()).fold(0.0, f64::max);
    let pad = multiplier * horizon.max(0.0).sqrt() * a_max + 4.0 * grid.h();
    build_flow_padded(&a, grid, pad)
}

pub fn build_flow_padded(a: &Field1, grid: &Grid1D, pad: f64) -> Result<FlowTable> {
    let padded = grid.padded(pad);
    let xs = padded.points();
    let a_values: Vec<f64> = xs.iter().map(|x| a.value(*x)).collect();
    if let Some((i, v)) = a_values.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::Coefficient(format!("σ_com({}) = {v} is not positive", xs[i])));
    }
    let f: Vec<f64> = a_values.iter().map(|v| 1.0 / v).collect();
    let fp: Vec<f64> = xs.iter().zip(&a_values).map(|(x, v)| -a.d1(*x) / (v * v)).collect();
    let h = padded.h();
    // Corrected trapezoid: exact integral of the cubic Hermite interpolant of 1/A.
    let mut phi_values = vec![0.0; xs.len()];
    for j in 0..xs.len() - 1 {
        phi_values[j + 1] = phi_values[j] + 0.5 * h * (f[j] + f[j + 1]) - h * h / 12.0 * (fp[j + 1] - fp[j]);
    }
    let mut phi = Hermite::with_slopes(&padded, phi_values, f);
    if padded.contains(0.0) {
        let c = phi.eval(0.0);
        phi.values.iter_mut().for_each(|v| *v -= c);
    }
    Ok(FlowTable { grid: grid.clone(), padded, a: a.clone(), a_values, phi_values: phi.values.clone(), phi })
}

impl FlowTable {
    pub fn phi(&self, x: f64) -> f64 {
        self.phi.eval(x)
    }

    pub fn phi_prime(&self, x: f64) -> f64 {
        self.phi.deriv(x)
    }

    pub fn phi_inverse(&self, y: f64) -> Option<f64> {
        self.phi.inverse(y)
    }

    /// Largest |t| for which Y(t, x) stays in the padded table for every
    /// working-grid node x.
    pub fn time_budget(&self) -> f64 {
        let lo = self.phi(self.grid.x_min()) - self.phi(self.padded.x_min());
        let hi = self.phi(self.padded.x_max()) - self.phi(self.grid.x_max());
        lo.min(hi)
    }

    pub fn jacobian(&self, t: f64, x: f64) -> Result<f64> {
        let y = flow_y(self, t, x)?;
        Ok(self.a.value(y) / self.a.value(x))
    }

    pub fn curvature(&self, t: f64, x: f64) -> Result<f64> {
        let y = flow_y(self, t, x)?;
        let ax = self.a.value(x);
        Ok(self.a.value(y) * (self.a.d1(y) - self.a.d1(x)) / (ax * ax))
    }
}

/// Y(t, x) = Φ⁻¹(Φ(x) − t).
pub fn flow_y(ft: &FlowTable, t: f64, x: f64) -> Result<f64> {
    if t == 0.0 {
        return Ok(x);
    }
    if !ft.padded.contains(x) {
        return Err(Error::DomainExit(format!("x = {x} outside the flow table")));
    }
    ft.phi_inverse(ft.phi(x) - t)
        .ok_or_else(|| Error::DomainExit(format!("Y({t}, {x}) leaves the padded table; enlarge the padding")))
}

/// (T_s v)(z) = v(Y(s, z)) ∂_z Y(s, z) on the grid of `v`.
pub fn pushforward(ft: &FlowTable, v: &GridMeasure, s: f64) -> Result<GridMeasure> {
    if s == 0.0 {
        return Ok(v.clone());
    }
    let interp = Hermite::centered(&v.grid, &v.density);
    let mut out = Vec::with_capacity(v.grid.n());
    for z in v.grid.points() {
        let y = flow_y(ft, s, z).map_err(|e| Error::Padding(e.to_string()))?;
        out.push(interp.eval_or(y, 0.0) * ft.a.value(y) / ft.a.value(z));
    }
    let out = GridMeasure { grid: v.grid.clone(), density: out };
    let leak = (out.mass() - v.mass()).abs();
    if leak > 1e-4 * v.total_variation().max(1.0) {
        return Err(Error::Padding(format!("pushforward by {s} changed mass by {leak}")));
    }
    Ok(out)
}

/// Node-wise data of the transformed equation at one instant.
#[derive(Debug, Clone)]
pub struct Transformed {
    /// z_j = Y(−W, x_j): physical position of g-node j.
    pub map: Vec<f64>,
    /// ∂_z Y(W, z) at z = z_j, i.e. A(x_j)/A(z_j).
    pub alpha: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub b_tilde: Vec<f64>,
    /// Control at the physical positions.
    pub u: Vec<f64>,
    pub moments: DriftMoments,
}

/// Node map x ↦ Y(−W, x) on the working grid; identity without common noise.
pub fn node_map(ft: Option<&FlowTable>, grid: &Grid1D, w: f64) -> Result<Vec<f64>> {
    match ft {
        Some(ft) if w != 0.0 => grid
            .points()
            .into_iter()
            .map(|x| flow_y(ft, -w, x).map_err(|e| Error::Padding(e.to_string())))
            .collect(),
        _ => Ok(grid.points()),
    }
}

/// σ̃² and b̃ of the transformed equation for the state g at time t.
pub fn transform(
    ft: Option<&FlowTable>,
    coeffs: &ModelCoefficients,
    policy: &dyn Policy,
    t: f64,
    w: f64,
    g: &GridMeasure,
) -> Result<Transformed> {
    let map = node_map(ft, &g.grid, w)?;
    let mu = MeasureRef::Mapped { g, map: &map };
    let moments = coeffs.drift_moments(&mu);
    let a = &coeffs.sigma_com;
    let n = g.grid.n();
    let (mut alpha, mut sigma2, mut b_tilde, mut u) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for j in 0..n {
        let x = g.grid.x(j);
        let z = map[j];
        let uj = policy.control(t, z, &mu);
        coeffs.check_control(uj)?;
        let s2 = coeffs.sigma_ind.value(z).powi(2);
        let b = coeffs.drift_with(z, &moments, uj);
        let (al, strat, curv) = if ft.is_some() {
            let (az, ax) = (a.value(z), a.value(x));
            let curv = if z == x { 0.0 } else { ax * (a.d1(x) - a.d1(z)) / (az * az) };
            (ax / az, 0.5 * az * a.d1(z), curv)
        } else {
            (1.0, 0.0, 0.0)
        };
        alpha[j] = al;
        sigma2[j] = s2 * al * al;
        b_tilde[j] = al * (b - strat) + 0.5 * s2 * curv;
        u[j] = uj;
    }
    Ok(Transformed { map, alpha, sigma2, b_tilde, u, moments })
}

/// Public form: (σ̃², b̃) on the grid of g.
pub fn transformed_coeffs(
    ft: Option<&FlowTable>,
    coeffs: &ModelCoefficients,
    policy: &dyn Policy,
    t: f64,
    w: f64,
    g: &GridMeasure,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let tr = transform(ft, coeffs, policy, t, w, g)?;
    Ok((tr.sigma2, tr.b_tilde))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::ConstPolicy;

    fn grid() -> Grid1D {
        Grid1D::new(-5.0, 5.0, 1001).unwrap()
    }

    fn table(a: Field1) -> FlowTable {
        build_flow_padded(&a, &grid(), 3.0).unwrap()
    }

    /// RK4 with many small steps for Ẏ = −A(Y).
    fn ode_oracle(a: &Field1, t: f64, x: f64) -> f64 {
        let steps = 20_000;
        let h = t / steps as f64;
        let f = |y: f64| -a.value(y);
        let mut y = x;
        for _ in 0..steps {
            let k1 = f(y);
            let k2 = f(y + 0.5 * h * k1);
            let k3 = f(y + 0.5 * h * k2);
            let k4 = f(y + h * k3);
            y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        y
    }

    #[test]
    fn constant_speed() {
        let ft = table(Field1::constant(2.0));
        assert!((ft.phi(3.0) - 1.5).abs() < 1e-10);
        assert!((flow_y(&ft, 0.4, 1.0).unwrap() - (1.0 - 0.8)).abs() < 1e-8);
        assert_eq!(flow_y(&ft, 0.0, 0.123456789).unwrap(), 0.123456789);
        let unit = table(Field1::constant(1.0));
        // Ẏ = −1 from 0.2 for 0.7 time units.
        assert!((flow_y(&unit, 0.7, 0.2).unwrap() + 0.5).abs() < 1e-10);
    }

    #[test]
    fn variable_speed_against_ode() {
        let a = Field1::Sin { a0: 2.0, a1: 1.0, omega: 1.0 };
        let ft = table(a.clone());
        for i in 1..ft.padded.n() - 1 {
            let x = ft.padded.x(i);
            assert!((ft.phi_prime(x) * a.value(x) - 1.0).abs() < 1e-12);
            let fd = (ft.phi_values[i + 1] - ft.phi_values[i - 1]) / (2.0 * ft.padded.h());
            assert!((fd * a.value(x) - 1.0).abs() < 1e-4);
        }
        let lhs = flow_y(&ft, 0.3, flow_y(&ft, 0.4, 0.1).unwrap()).unwrap();
        let rhs = flow_y(&ft, 0.7, 0.1).unwrap();
        assert!((lhs - rhs).abs() < 1e-6);
        for &(t, x) in &[(0.7, 0.1), (-0.5, 1.3), (1.1, -2.0)] {
            assert!((flow_y(&ft, t, x).unwrap() - ode_oracle(&a, t, x)).abs() < 1e-6, "t {t} x {x}");
        }
        // Jacobian and curvature against differences of Y.
        let e = 1e-4;
        let (t, x) = (0.6, 0.4);
        let d1 = (flow_y(&ft, t, x + e).unwrap() - flow_y(&ft, t, x - e).unwrap()) / (2.0 * e);
        assert!((d1 - ft.jacobian(t, x).unwrap()).abs() < 1e-6);
        let d2 = (ft.jacobian(t, x + e).unwrap() - ft.jacobian(t, x - e).unwrap()) / (2.0 * e);
        assert!((d2 - ft.curvature(t, x).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn exits_are_reported() {
        let ft = table(Field1::constant(1.0));
        assert!(matches!(flow_y(&ft, 100.0, 0.0), Err(Error::DomainExit(_))));
        assert!(matches!(
            build_flow_padded(&Field1::affine(0.0, 1.0), &grid(), 1.0),
            Err(Error::Coefficient(_))
        ));
    }

    #[test]
    fn pushforward_properties() {
        let g = grid();
        let v = GridMeasure::gaussian(&g, -0.3, 0.6);
        let unit = table(Field1::constant(1.0));
        assert_eq!(pushforward(&unit, &v, 0.0).unwrap(), v);
        let shifted = pushforward(&unit, &v, 0.8).unwrap();
        assert!((shifted.mass() - 1.0).abs() < 1e-8);
        assert!((shifted.moment(1) - 0.5).abs() < 1e-6);

        let a = Field1::Sin { a0: 2.0, a1: 1.0, omega: 1.0 };
        let ft = table(a);
        let fwd = pushforward(&ft, &v, 0.5).unwrap();
        assert!((fwd.mass() - 1.0).abs() < 1e-6);
        assert!(fwd.negative_mass() == 0.0);
        let back = pushforward(&ft, &fwd, -0.5).unwrap();
        assert!(back.l1_distance(&v) < 1e-4);
        let two = pushforward(&ft, &pushforward(&ft, &v, 0.2).unwrap(), 0.3).unwrap();
        assert!(two.l1_distance(&fwd) < 1e-4);
        // Duality (φ, T_s v) = (φ ∘ Y(−s, ·), v).
        let lhs = fwd.integrate_fn(|z| z.sin());
        let rhs = v.integrate_fn(|x| flow_y(&ft, -0.5, x).unwrap().sin());
        assert!((lhs - rhs).abs() < 1e-6);
    }

    #[test]
    fn transformed_coefficient_cases() {
        let g = Grid1D::new(-5.0, 5.0, 201).unwrap();
        let v = GridMeasure::gaussian(&g, 0.0, 1.0);
        let c = ModelCoefficients::ou_common(1.0, 0.5);
        let ft = build_flow_padded(&c.sigma_com, &g, 3.0).unwrap();
        let p = ConstPolicy(0.0);
        let (s2, b) = transformed_coeffs(Some(&ft), &c, &p, 0.0, 0.0, &v).unwrap();
        let mean = v.moment(1);
        for j in 0..g.n() {
            assert_eq!(s2[j], 1.0);
            assert_eq!(b[j], crate::model::drift(&c, g.x(j), &MeasureRef::Grid(&v), 0.0).unwrap());
        }
        // Constant A: pure shift z = x + aW.
        let w = 0.8;
        let (_, b) = transformed_coeffs(Some(&ft), &c, &p, 0.0, w, &v).unwrap();
        let shifted_mean = mean + 0.5 * w;
        for j in 0..g.n() {
            let z = g.x(j) + 0.5 * w;
            assert!((b[j] - (shifted_mean - z)).abs() < 1e-9);
        }

        let va = ModelCoefficients::var_a(1.0, 0.5, 0.2);
        let mut sin_model = va.clone();
        sin_model.sigma_com = Field1::Sin { a0: 2.0, a1: 1.0, omega: 1.0 };
        let ft = build_flow_padded(&sin_model.sigma_com, &g, 3.0).unwrap();
        let (s2, _) = transformed_coeffs(Some(&ft), &sin_model, &p, 0.0, 0.5, &v).unwrap();
        // σ₁ A₁/A₂ ≤ σ̃ ≤ σ₂ A₂/A₁ with σ ≡ 1, A ∈ [1, 3].
        for v in s2 {
            assert!(v >= (1.0f64 / 3.0).powi(2) - 1e-12 && v <= 9.0 + 1e-12);
        }
    }
}
