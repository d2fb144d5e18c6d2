//! Generators acting on cylinder functionals F(μ) = Σ w_k F_k(μ).
//!
//! For f(x₁, …, x_N) = F(μ^N) with μ^N = (1/N)Σδ_{x_i}:
//!
//! ```text
//! A_N f    = Σ_i [b ∂_i f + ½(σ_ind² + σ_com²)(x_i) ∂²_ii f] + Σ_{i<j} σ_com(x_i) σ_com(x_j) ∂²_ij f
//! Λ_lim F  = ∫ [b ∂_x + ½(σ_ind² + σ_com²) ∂²_x] δF/δμ dμ + ½∬ σ_com(y) σ_com(z) ∂²_yz δ²F/δμδμ dμ dμ
//! Λ_corr F = ½∫ σ_ind²(x) ∂²_yz δ²F/δμδμ |_{y=z=x} dμ
//! ```
//!
//! and A_N F = Λ_lim F + Λ_corr F / N holds exactly at atomic measures. The
//! left side is evaluated by finite differences in particle coordinates, the
//! right side from closed-form variational derivatives.

use crate::error::{Error, Result};
use crate::model::{Field1, MeasureRef, ModelCoefficients, MomentFunctional};
use crate::policy::Policy;

/// Largest N for the brute-force oracle.
pub const MAX_FD_PARTICLES: usize = 64;

/// Default finite-difference step of the oracle.
pub const FD_STEP: f64 = 1e-2;

/// Coefficients of the five-point first-derivative stencil at offsets −2..2.
const D1: [f64; 5] = [1.0 / 12.0, -8.0 / 12.0, 0.0, 8.0 / 12.0, -1.0 / 12.0];
const D2: [f64; 5] = [-1.0 / 12.0, 16.0 / 12.0, -30.0 / 12.0, 16.0 / 12.0, -1.0 / 12.0];

#[derive(Debug, Clone, PartialEq)]
pub struct CylinderFunctional {
    pub parts: Vec<(f64, MomentFunctional)>,
}

impl CylinderFunctional {
    pub fn single(f: MomentFunctional) -> Self {
        Self { parts: vec![(1.0, f)] }
    }

    pub fn value(&self, mu: &MeasureRef) -> f64 {
        self.parts.iter().map(|(w, f)| w * f.value(mu)).sum()
    }

    pub fn is_linear(&self) -> bool {
        self.parts.iter().all(|(_, f)| f.order() == 1)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { parts: self.parts.iter().map(|(w, f)| (c * w, f.clone())).collect() }
    }

    pub fn plus(&self, other: &Self) -> Self {
        Self { parts: self.parts.iter().chain(&other.parts).cloned().collect() }
    }
}

/// The shipped functional gallery.
pub fn gallery() -> Vec<(&'static str, CylinderFunctional)> {
    vec![
        ("linear-sin", CylinderFunctional::single(MomentFunctional::Linear(Field1::Sin { a0: 0.0, a1: 1.0, omega: 1.0 }))),
        ("linear-x2", CylinderFunctional::single(MomentFunctional::Linear(Field1::monomial(2)))),
        ("mean-squared", CylinderFunctional::single(MomentFunctional::pair_product(Field1::monomial(1)))),
        ("variance", CylinderFunctional::single(MomentFunctional::pair_half_sq_diff())),
        ("pair-cos", CylinderFunctional::single(MomentFunctional::pair_cos_diff(1.0))),
    ]
}

fn controls(coeffs: &ModelCoefficients, policy: &dyn Policy, t: f64, positions: &[f64]) -> Result<Vec<f64>> {
    let mu = MeasureRef::Atoms(positions);
    positions
        .iter()
        .map(|x| {
            let u = policy.control(t, *x, &mu);
            coeffs.check_control(u)?;
            Ok(u)
        })
        .collect()
}

/// A_N F at the configuration `positions` by five-point differences with step `h`.
pub fn apply_an_fd(
    coeffs: &ModelCoefficients,
    policy: &dyn Policy,
    f: &CylinderFunctional,
    positions: &[f64],
    t: f64,
    h: f64,
) -> Result<f64> {
    let n = positions.len();
    if n == 0 || n > MAX_FD_PARTICLES {
        return Err(Error::Argument(format!("finite-difference oracle needs 1 ≤ N ≤ {MAX_FD_PARTICLES}, got {n}")));
    }
    let mu = MeasureRef::Atoms(positions);
    let dm = coeffs.drift_moments(&mu);
    let u = controls(coeffs, policy, t, positions)?;
    let mut work = positions.to_vec();
    let eval = |work: &[f64]| f.value(&MeasureRef::Atoms(work));
    let mut total = 0.0;
    for i in 0..n {
        let xi = positions[i];
        let (mut d1, mut d2) = (0.0, 0.0);
        for (k, off) in (-2i32..=2).enumerate() {
            work[i] = xi + off as f64 * h;
            let v = eval(&work);
            d1 += D1[k] * v;
            d2 += D2[k] * v;
        }
        work[i] = xi;
        d1 /= h;
        d2 /= h * h;
        total += coeffs.drift_with(xi, &dm, u[i]) * d1 + 0.5 * coeffs.sigma_tot2(xi) * d2;
    }
    if coeffs.has_common_noise() {
        for i in 0..n {
            for j in i + 1..n {
                let (xi, xj) = (positions[i], positions[j]);
                let mut mixed = 0.0;
                for (a, oa) in (-2i32..=2).enumerate() {
                    if D1[a] == 0.0 {
                        continue;
                    }
                    for (b, ob) in (-2i32..=2).enumerate() {
                        if D1[b] == 0.0 {
                            continue;
                        }
                        work[i] = xi + oa as f64 * h;
                        work[j] = xj + ob as f64 * h;
                        mixed += D1[a] * D1[b] * eval(&work);
                    }
                }
                work[i] = xi;
                work[j] = xj;
                total += coeffs.sigma_com.value(xi) * coeffs.sigma_com.value(xj) * mixed / (h * h);
            }
        }
    }
    Ok(total)
}

/// ∬ a(y) a(z) ∂²_yz δ²F/δμ(y)δμ(z) μ(dy) μ(dz) for one part.
fn common_pair_term(f: &MomentFunctional, a: &Field1, mu: &MeasureRef) -> f64 {
    match f {
        MomentFunctional::Linear(_) => 0.0,
        // ∂²_yz c(f(y)g(z) + g(y)f(z)) integrates to 2c ∫a f′ ∫a g′.
        MomentFunctional::Pair(ts) => ts
            .iter()
            .map(|t| 2.0 * t.c * mu.integrate(|y| a.value(y) * t.f.d1(y)) * mu.integrate(|y| a.value(y) * t.g.d1(y)))
            .sum(),
    }
}

/// Λ_lim F at μ (grid or atomic).
pub fn apply_lambda_lim(
    coeffs: &ModelCoefficients,
    policy: &dyn Policy,
    f: &CylinderFunctional,
    mu: &MeasureRef,
    t: f64,
) -> Result<f64> {
    let dm = coeffs.drift_moments(mu);
    let (pts, wts) = mu.atoms_weights();
    let mut total = 0.0;
    for (x, w) in pts.iter().zip(&wts) {
        if *w == 0.0 {
            continue;
        }
        let u = policy.control(t, *x, mu);
        coeffs.check_control(u)?;
        let b = coeffs.drift_with(*x, &dm, u);
        let s2 = coeffs.sigma_tot2(*x);
        let local: f64 = f
            .parts
            .iter()
            .map(|(c, part)| {
                let jet = part.vd1_jet(mu, *x);
                c * (b * jet[1] + 0.5 * s2 * jet[2])
            })
            .sum();
        total += w * local;
    }
    if coeffs.has_common_noise() {
        total += 0.5 * f.parts.iter().map(|(c, part)| c * common_pair_term(part, &coeffs.sigma_com, mu)).sum::<f64>();
    }
    Ok(total)
}

/// Λ_corr F at μ.
pub fn apply_lambda_corr(coeffs: &ModelCoefficients, f: &CylinderFunctional, mu: &MeasureRef) -> f64 {
    if f.is_linear() {
        return 0.0;
    }
    0.5 * mu.integrate(|x| {
        let s2 = coeffs.sigma_ind.value(x).powi(2);
        s2 * f.parts.iter().map(|(c, part)| c * part.vd2_mixed(x, x)).sum::<f64>()
    })
}

/// |A_N F − Λ_lim F − Λ_corr F / N| at the atomic measure of `positions`.
pub fn decomposition_residual(
    coeffs: &ModelCoefficients,
    policy: &dyn Policy,
    f: &CylinderFunctional,
    positions: &[f64],
    t: f64,
) -> Result<f64> {
    let an = apply_an_fd(coeffs, policy, f, positions, t, FD_STEP)?;
    let mu = MeasureRef::Atoms(positions);
    let lim = apply_lambda_lim(coeffs, policy, f, &mu, t)?;
    let corr = apply_lambda_corr(coeffs, f, &mu);
    Ok((an - lim - corr / positions.len() as f64).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Grid1D, GridMeasure};
    use crate::model::MeanFieldExpr;
    use crate::policy::{ConstPolicy, FnPolicy, MeanReverting};
    use proptest::prelude::*;

    fn free(sigma_ind: f64, a: f64) -> ModelCoefficients {
        let mut c = ModelCoefficients::ou_common(0.0, a).with_sigma_ind(sigma_ind);
        c.b1 = MeanFieldExpr::zero();
        c
    }

    fn mean_sq() -> CylinderFunctional {
        CylinderFunctional::single(MomentFunctional::pair_product(Field1::monomial(1)))
    }

    const FIVE: [f64; 5] = [-1.0, -0.5, 0.0, 0.5, 1.0];

    #[test]
    fn linear_x2_heat() {
        let c = free(0.8, 0.6);
        let f = CylinderFunctional::single(MomentFunctional::Linear(Field1::monomial(2)));
        let v = apply_an_fd(&c, &ConstPolicy(0.0), &f, &FIVE, 0.0, FD_STEP).unwrap();
        // Σ_i ½σ²_tot · 2/N; mixed partials of an additive f vanish.
        assert!((v - (0.64 + 0.36)).abs() < 1e-9);
        let k = CylinderFunctional { parts: vec![(1.0, MomentFunctional::Linear(Field1::constant(3.0)))] };
        assert!(apply_an_fd(&c, &ConstPolicy(0.0), &k, &FIVE, 0.0, FD_STEP).unwrap().abs() < 1e-8);
    }

    #[test]
    fn closed_forms() {
        let mu = MeasureRef::Atoms(&FIVE);
        let c = free(1.0, 0.5);
        assert!((apply_lambda_corr(&c, &mean_sq(), &mu) - 1.0).abs() < 1e-14);
        let lin = CylinderFunctional::single(MomentFunctional::Linear(Field1::monomial(3)));
        assert_eq!(apply_lambda_corr(&c, &lin, &mu), 0.0);
        assert_eq!(apply_lambda_corr(&free(0.0, 0.5), &mean_sq(), &mu), 0.0);
        let c0 = free(0.0, 0.5);
        let lim = apply_lambda_lim(&c0, &ConstPolicy(0.0), &mean_sq(), &mu, 0.0).unwrap();
        // δF = 2 m x: second x-derivative 0, ∂yz δ²F = 2, so Λ_lim = ½ a² · 2 = a².
        assert!((lim - 0.25).abs() < 1e-14);
        let zero = GridMeasure::zeros(&Grid1D::new(-1.0, 1.0, 11).unwrap());
        let z = apply_lambda_lim(&c, &ConstPolicy(0.0), &mean_sq(), &MeasureRef::Grid(&zero), 0.0).unwrap();
        assert_eq!(z, 0.0);
    }

    #[test]
    fn decomposition_examples() {
        let lin = CylinderFunctional::single(MomentFunctional::Linear(Field1::Sin { a0: 0.0, a1: 1.0, omega: 1.0 }));
        let ou = ModelCoefficients::ou_common(1.0, 0.5);
        assert!(decomposition_residual(&ou, &ConstPolicy(0.2), &lin, &FIVE, 0.0).unwrap() < 1e-7);
        assert!(decomposition_residual(&ou, &ConstPolicy(0.0), &mean_sq(), &FIVE, 0.0).unwrap() < 1e-6);
        let cos = CylinderFunctional::single(MomentFunctional::pair_cos_diff(1.0));
        let pos = [-1.3, -0.2, 0.4, 0.9, 1.7, -2.1, 0.05, 2.4];
        let var = ModelCoefficients::var_a(1.0, 0.5, 0.2);
        assert!(decomposition_residual(&var, &MeanReverting(0.7), &cos, &pos, 0.0).unwrap() < 1e-5);
    }

    #[test]
    fn corr_scales_with_sigma_squared() {
        let mu = MeasureRef::Atoms(&FIVE);
        let f = CylinderFunctional::single(MomentFunctional::pair_cos_diff(1.3));
        let one = apply_lambda_corr(&free(0.7, 0.5), &f, &mu);
        let two = apply_lambda_corr(&free(1.4, 0.5), &f, &mu);
        assert_eq!(two, 4.0 * one);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn residual_small_and_operators_linear(
            pos in prop::collection::vec(-2.5f64..2.5, 2..9),
            k in 0usize..5,
            w in -2.0f64..2.0,
        ) {
            let var = ModelCoefficients::var_a(1.0, 0.5, 0.2);
            let p = FnPolicy(|_t, x: f64| -0.3 * x);
            let (_, f) = &gallery()[k];
            prop_assert!(decomposition_residual(&var, &p, f, &pos, 0.0).unwrap() < 1e-5);
            let (_, g) = &gallery()[(k + 1) % 5];
            let mu = MeasureRef::Atoms(&pos);
            let combo = f.scaled(w).plus(g);
            let lhs = apply_lambda_lim(&var, &p, &combo, &mu, 0.0).unwrap();
            let rhs = w * apply_lambda_lim(&var, &p, f, &mu, 0.0).unwrap() + apply_lambda_lim(&var, &p, g, &mu, 0.0).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + lhs.abs()));
            let lc = apply_lambda_corr(&var, &combo, &mu);
            let rc = w * apply_lambda_corr(&var, f, &mu) + apply_lambda_corr(&var, g, &mu);
            prop_assert!((lc - rc).abs() < 1e-10 * (1.0 + lc.abs()));
        }
    }
}
