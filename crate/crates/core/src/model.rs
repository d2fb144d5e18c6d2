//! Problem data: noise coefficients, control-affine drift, costs, and the
//! moment functionals through which everything depends on the measure.
//!
//! Measure dependence is always of the form
//!
//! ```text
//! e(x, μ) = Σ_k c_k(x) · link_k(M_k(μ)),   M_k(μ) = ∫f dμ  or  ∬F̃ dμ dμ
//! ```
//!
//! so first and second variational derivatives are closed-form. Coefficients
//! are time-homogeneous.

use crate::error::{Error, Result};
use crate::grid::{Grid1D, GridMeasure};

/// Closed-form scalar field of one variable with two derivatives.
#[derive(Debug, Clone, PartialEq)]
pub enum Field1 {
    /// Σ c_k x^k.
    Poly(Vec<f64>),
    /// a0 + a1 tanh(x).
    Tanh { a0: f64, a1: f64 },
    /// a0 + a1 sin(ωx).
    Sin { a0: f64, a1: f64, omega: f64 },
    /// a0 + a1 cos(ωx).
    Cos { a0: f64, a1: f64, omega: f64 },
}

impl Field1 {
    pub fn constant(c: f64) -> Self {
        Field1::Poly(vec![c])
    }
    pub fn affine(c0: f64, c1: f64) -> Self {
        Field1::Poly(vec![c0, c1])
    }
    pub fn monomial(p: usize) -> Self {
        let mut c = vec![0.0; p + 1];
        c[p] = 1.0;
        Field1::Poly(c)
    }

    pub fn value(&self, x: f64) -> f64 {
        match self {
            Field1::Poly(c) => c.iter().rev().fold(0.0, |acc, ck| acc * x + ck),
            Field1::Tanh { a0, a1 } => a0 + a1 * x.tanh(),
            Field1::Sin { a0, a1, omega } => a0 + a1 * (omega * x).sin(),
            Field1::Cos { a0, a1, omega } => a0 + a1 * (omega * x).cos(),
        }
    }

    pub fn d1(&self, x: f64) -> f64 {
        match self {
            Field1::Poly(c) => c.iter().enumerate().skip(1).rev().fold(0.0, |acc, (k, ck)| acc * x + k as f64 * ck),
            Field1::Tanh { a1, .. } => a1 * (1.0 - x.tanh().powi(2)),
            Field1::Sin { a1, omega, .. } => a1 * omega * (omega * x).cos(),
            Field1::Cos { a1, omega, .. } => -a1 * omega * (omega * x).sin(),
        }
    }

    pub fn d2(&self, x: f64) -> f64 {
        match self {
            Field1::Poly(c) => c
                .iter()
                .enumerate()
                .skip(2)
                .rev()
                .fold(0.0, |acc, (k, ck)| acc * x + (k * (k - 1)) as f64 * ck),
            Field1::Tanh { a1, .. } => {
                let t = x.tanh();
                -2.0 * a1 * t * (1.0 - t * t)
            }
            Field1::Sin { a1, omega, .. } => -a1 * omega * omega * (omega * x).sin(),
            Field1::Cos { a1, omega, .. } => -a1 * omega * omega * (omega * x).cos(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Field1::Poly(c) => c.iter().all(|v| *v == 0.0),
            Field1::Tanh { a0, a1 } => *a0 == 0.0 && *a1 == 0.0,
            Field1::Sin { a0, a1, .. } | Field1::Cos { a0, a1, .. } => *a0 == 0.0 && *a1 == 0.0,
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            Field1::Poly(c) => c.iter().skip(1).all(|v| *v == 0.0),
            Field1::Tanh { a1, .. } | Field1::Sin { a1, .. } | Field1::Cos { a1, .. } => *a1 == 0.0,
        }
    }
}

/// One separable piece `c · ½(f(x)g(y) + g(x)f(y))` of a symmetric pair kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct SepTerm {
    pub c: f64,
    pub f: Field1,
    pub g: Field1,
}

/// F(μ) = ∫f dμ (order 1) or ∬F̃ dμ dμ with a symmetric separable F̃ (order 2).
#[derive(Debug, Clone, PartialEq)]
pub enum MomentFunctional {
    Linear(Field1),
    Pair(Vec<SepTerm>),
}

/// A (possibly signed) measure seen through integrals against test functions.
#[derive(Debug, Clone, Copy)]
pub enum MeasureRef<'a> {
    Grid(&'a GridMeasure),
    /// Empirical measure with equal weights 1/N.
    Atoms(&'a [f64]),
    /// Image of a grid density under the node map `x_i ↦ map[i]`.
    Mapped { g: &'a GridMeasure, map: &'a [f64] },
}

impl<'a> MeasureRef<'a> {
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        match self {
            MeasureRef::Grid(m) => m.integrate_fn(f),
            MeasureRef::Atoms(xs) => xs.iter().map(|x| f(*x)).sum::<f64>() / xs.len() as f64,
            MeasureRef::Mapped { g, map } => (0..g.grid.n()).map(|i| g.grid.weight(i) * f(map[i]) * g.density[i]).sum(),
        }
    }

    /// Brute-force tensor quadrature of a two-point kernel.
    pub fn integrate2(&self, k: impl Fn(f64, f64) -> f64) -> f64 {
        let (pts, wts) = self.atoms_weights();
        let mut s = 0.0;
        for (i, x) in pts.iter().enumerate() {
            for (j, y) in pts.iter().enumerate() {
                s += wts[i] * wts[j] * k(*x, *y);
            }
        }
        s
    }

    /// Support points and signed weights.
    pub fn atoms_weights(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            MeasureRef::Grid(m) => (m.grid.points(), (0..m.grid.n()).map(|i| m.grid.weight(i) * m.density[i]).collect()),
            MeasureRef::Atoms(xs) => (xs.to_vec(), vec![1.0 / xs.len() as f64; xs.len()]),
            MeasureRef::Mapped { g, map } => (map.to_vec(), (0..g.grid.n()).map(|i| g.grid.weight(i) * g.density[i]).collect()),
        }
    }
}

impl MomentFunctional {
    pub fn pair_product(f: Field1) -> Self {
        MomentFunctional::Pair(vec![SepTerm { c: 1.0, f: f.clone(), g: f }])
    }
    /// F̃(x, y) = cos(ω(x − y)).
    pub fn pair_cos_diff(omega: f64) -> Self {
        let cos = Field1::Cos { a0: 0.0, a1: 1.0, omega };
        let sin = Field1::Sin { a0: 0.0, a1: 1.0, omega };
        MomentFunctional::Pair(vec![
            SepTerm { c: 1.0, f: cos.clone(), g: cos },
            SepTerm { c: 1.0, f: sin.clone(), g: sin },
        ])
    }
    /// F̃(x, y) = ½(x − y)², so F(μ) is the variance of a probability μ.
    pub fn pair_half_sq_diff() -> Self {
        MomentFunctional::Pair(vec![
            SepTerm { c: 1.0, f: Field1::monomial(2), g: Field1::constant(1.0) },
            SepTerm { c: -1.0, f: Field1::monomial(1), g: Field1::monomial(1) },
        ])
    }

    pub fn order(&self) -> usize {
        match self {
            MomentFunctional::Linear(_) => 1,
            MomentFunctional::Pair(_) => 2,
        }
    }

    /// F̃(x) for order 1, F̃(x, y) for order 2 (`y` ignored for order 1).
    pub fn kernel(&self, x: f64, y: f64) -> f64 {
        match self {
            MomentFunctional::Linear(f) => f.value(x),
            MomentFunctional::Pair(ts) => ts.iter().map(|t| 0.5 * t.c * (t.f.value(x) * t.g.value(y) + t.g.value(x) * t.f.value(y))).sum(),
        }
    }

    pub fn value(&self, mu: &MeasureRef) -> f64 {
        match self {
            MomentFunctional::Linear(f) => mu.integrate(|x| f.value(x)),
            MomentFunctional::Pair(ts) => ts.iter().map(|t| t.c * mu.integrate(|x| t.f.value(x)) * mu.integrate(|x| t.g.value(x))).sum(),
        }
    }

    /// Directional derivative `∫ δF/δμ(r) ζ(dr)`.
    pub fn d1_along(&self, mu: &MeasureRef, zeta: &MeasureRef) -> f64 {
        match self {
            MomentFunctional::Linear(f) => zeta.integrate(|x| f.value(x)),
            MomentFunctional::Pair(ts) => ts
                .iter()
                .map(|t| {
                    let (fm, gm) = (mu.integrate(|x| t.f.value(x)), mu.integrate(|x| t.g.value(x)));
                    let (fz, gz) = (zeta.integrate(|x| t.f.value(x)), zeta.integrate(|x| t.g.value(x)));
                    t.c * (fz * gm + fm * gz)
                })
                .sum(),
        }
    }

    /// Second directional derivative `∬ δ²F/δμδμ(r, s) ζ₁(dr) ζ₂(ds)`.
    pub fn d2_along(&self, z1: &MeasureRef, z2: &MeasureRef) -> f64 {
        match self {
            MomentFunctional::Linear(_) => 0.0,
            MomentFunctional::Pair(ts) => ts
                .iter()
                .map(|t| {
                    let (f1, g1) = (z1.integrate(|x| t.f.value(x)), z1.integrate(|x| t.g.value(x)));
                    let (f2, g2) = (z2.integrate(|x| t.f.value(x)), z2.integrate(|x| t.g.value(x)));
                    t.c * (f1 * g2 + f2 * g1)
                })
                .sum(),
        }
    }

    /// δF/δμ(x) and its first two x-derivatives.
    pub fn vd1_jet(&self, mu: &MeasureRef, x: f64) -> [f64; 3] {
        match self {
            MomentFunctional::Linear(f) => [f.value(x), f.d1(x), f.d2(x)],
            MomentFunctional::Pair(ts) => {
                let mut out = [0.0; 3];
                for t in ts {
                    let (fm, gm) = (mu.integrate(|y| t.f.value(y)), mu.integrate(|y| t.g.value(y)));
                    // 2 ∫ ½(f(x)g(y) + g(x)f(y)) μ(dy)
                    out[0] += t.c * (t.f.value(x) * gm + t.g.value(x) * fm);
                    out[1] += t.c * (t.f.d1(x) * gm + t.g.d1(x) * fm);
                    out[2] += t.c * (t.f.d2(x) * gm + t.g.d2(x) * fm);
                }
                out
            }
        }
    }

    /// ∂²/∂y∂z of δ²F/δμ(y)δμ(z) = 2F̃(y, z).
    pub fn vd2_mixed(&self, y: f64, z: f64) -> f64 {
        match self {
            MomentFunctional::Linear(_) => 0.0,
            MomentFunctional::Pair(ts) => ts.iter().map(|t| t.c * (t.f.d1(y) * t.g.d1(z) + t.g.d1(y) * t.f.d1(z))).sum(),
        }
    }
}

/// Value of F at μ.
pub fn moment_value(f: &MomentFunctional, mu: &MeasureRef) -> f64 {
    f.value(mu)
}

/// δF/δμ(x) = k ∫F̃(x, ·) dμ^{⊗(k−1)}.
pub fn moment_vd1(f: &MomentFunctional, mu: &MeasureRef, x: f64) -> f64 {
    f.vd1_jet(mu, x)[0]
}

/// δ²F/δμ(x)δμ(y) = k(k−1) F̃(x, y).
pub fn moment_vd2(f: &MomentFunctional, x: f64, y: f64) -> f64 {
    match f {
        MomentFunctional::Linear(_) => 0.0,
        MomentFunctional::Pair(_) => 2.0 * f.kernel(x, y),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Link {
    Identity,
    Square,
}

impl Link {
    fn value(self, m: f64) -> f64 {
        match self {
            Link::Identity => m,
            Link::Square => m * m,
        }
    }
    fn d1(self, m: f64) -> f64 {
        match self {
            Link::Identity => 1.0,
            Link::Square => 2.0 * m,
        }
    }
    fn d2(self) -> f64 {
        match self {
            Link::Identity => 0.0,
            Link::Square => 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExprTerm {
    pub coef: Field1,
    pub moment: Option<MomentFunctional>,
    pub link: Link,
}

/// `e(x, μ) = Σ coef_k(x) · link_k(M_k(μ))`; a term without moment is `coef(x)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MeanFieldExpr {
    pub terms: Vec<ExprTerm>,
}

impl MeanFieldExpr {
    pub fn field(f: Field1) -> Self {
        Self { terms: vec![ExprTerm { coef: f, moment: None, link: Link::Identity }] }
    }
    pub fn zero() -> Self {
        Self::default()
    }
    pub fn plus(mut self, coef: Field1, moment: Option<MomentFunctional>, link: Link) -> Self {
        self.terms.push(ExprTerm { coef, moment, link });
        self
    }

    pub fn is_measure_free(&self) -> bool {
        self.terms.iter().all(|t| t.moment.is_none())
    }

    /// Moment values M_k(μ), one per term (1 for measure-free terms).
    pub fn moments(&self, mu: &MeasureRef) -> Vec<f64> {
        self.terms.iter().map(|t| t.moment.as_ref().map_or(1.0, |m| m.value(mu))).collect()
    }

    pub fn eval(&self, x: f64, moments: &[f64]) -> f64 {
        self.terms
            .iter()
            .zip(moments)
            .map(|(t, m)| t.coef.value(x) * if t.moment.is_some() { t.link.value(*m) } else { 1.0 })
            .sum()
    }

    pub fn eval_at(&self, x: f64, mu: &MeasureRef) -> f64 {
        self.eval(x, &self.moments(mu))
    }

    /// First directional derivatives of the moments along ζ.
    pub fn moment_d1(&self, mu: &MeasureRef, zeta: &MeasureRef) -> Vec<f64> {
        self.terms.iter().map(|t| t.moment.as_ref().map_or(0.0, |m| m.d1_along(mu, zeta))).collect()
    }

    /// Second directional derivatives of the moments along (ζ₁, ζ₂).
    pub fn moment_d2(&self, z1: &MeasureRef, z2: &MeasureRef) -> Vec<f64> {
        self.terms.iter().map(|t| t.moment.as_ref().map_or(0.0, |m| m.d2_along(z1, z2))).collect()
    }

    /// `D_μ e(x)[ζ]` from precomputed moments and directional moment derivatives.
    pub fn variation1(&self, x: f64, moments: &[f64], dm: &[f64]) -> f64 {
        self.terms
            .iter()
            .enumerate()
            .filter(|(_, t)| t.moment.is_some())
            .map(|(k, t)| t.coef.value(x) * t.link.d1(moments[k]) * dm[k])
            .sum()
    }

    /// `D²_μ e(x)[ζ₁, ζ₂]`.
    pub fn variation2(&self, x: f64, moments: &[f64], dm1: &[f64], dm2: &[f64], d2m: &[f64]) -> f64 {
        self.terms
            .iter()
            .enumerate()
            .filter(|(_, t)| t.moment.is_some())
            .map(|(k, t)| t.coef.value(x) * (t.link.d2() * dm1[k] * dm2[k] + t.link.d1(moments[k]) * d2m[k]))
            .sum()
    }
}

/// J(x, μ, u) = ½ r u² + q u⁴ + state(x, μ).
#[derive(Debug, Clone, PartialEq)]
pub struct RunningCost {
    pub r: f64,
    pub q: f64,
    pub state: MeanFieldExpr,
}

impl RunningCost {
    pub fn quadratic() -> Self {
        Self { r: 1.0, q: 0.0, state: MeanFieldExpr::zero() }
    }
    pub fn control_part(&self, u: f64) -> f64 {
        0.5 * self.r * u * u + self.q * u.powi(4)
    }
    pub fn du(&self, u: f64) -> f64 {
        self.r * u + 4.0 * self.q * u.powi(3)
    }
    pub fn duu(&self, u: f64) -> f64 {
        self.r + 12.0 * self.q * u * u
    }
    pub fn eval(&self, x: f64, state_moments: &[f64], u: f64) -> f64 {
        self.control_part(u) + self.state.eval(x, state_moments)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCoefficients {
    pub name: String,
    pub sigma_ind: Field1,
    /// σ_com, also written A.
    pub sigma_com: Field1,
    pub b1: MeanFieldExpr,
    pub b2: MeanFieldExpr,
    pub running_cost: RunningCost,
    pub terminal_cost: MeanFieldExpr,
    pub u_box: (f64, f64),
    /// Declared lower bound σ₁ for σ_ind.
    pub sigma_ind_lower: f64,
    /// Declared lower bound A₁ for σ_com; ignored when σ_com ≡ 0.
    pub sigma_com_lower: f64,
}

/// Moment values of b₁ and b₂ at one measure.
#[derive(Debug, Clone)]
pub struct DriftMoments {
    pub b1: Vec<f64>,
    pub b2: Vec<f64>,
}

impl ModelCoefficients {
    /// σ_ind = s, σ_com = a, b₁ = κ(m₁(μ) − x), b₂ = 1, J = u²/2, V_T = x²/2.
    pub fn ou_common(kappa: f64, a: f64) -> Self {
        let m1 = MomentFunctional::Linear(Field1::monomial(1));
        Self {
            name: "ou-common".into(),
            sigma_ind: Field1::constant(1.0),
            sigma_com: Field1::constant(a),
            b1: MeanFieldExpr::field(Field1::affine(0.0, -kappa)).plus(Field1::constant(kappa), Some(m1), Link::Identity),
            b2: MeanFieldExpr::field(Field1::constant(1.0)),
            running_cost: RunningCost::quadratic(),
            terminal_cost: MeanFieldExpr::field(Field1::Poly(vec![0.0, 0.0, 0.5])),
            u_box: (-10.0, 10.0),
            sigma_ind_lower: 1.0,
            sigma_com_lower: a.abs(),
        }
    }

    /// As `ou_common` but σ_com(x) = a0 + a1 tanh(x).
    pub fn var_a(kappa: f64, a0: f64, a1: f64) -> Self {
        Self {
            name: "var-a".into(),
            sigma_com: Field1::Tanh { a0, a1 },
            sigma_com_lower: a0 - a1.abs(),
            ..Self::ou_common(kappa, a0)
        }
    }

    pub fn with_sigma_ind(mut self, s: f64) -> Self {
        self.sigma_ind = Field1::constant(s);
        self.sigma_ind_lower = s.abs();
        self
    }

    pub fn with_u_box(mut self, lo: f64, hi: f64) -> Self {
        self.u_box = (lo, hi);
        self
    }

    pub fn has_common_noise(&self) -> bool {
        !self.sigma_com.is_zero()
    }

    pub fn is_measure_free(&self) -> bool {
        self.b1.is_measure_free() && self.b2.is_measure_free()
    }

    pub fn sigma_tot2(&self, x: f64) -> f64 {
        self.sigma_ind.value(x).powi(2) + self.sigma_com.value(x).powi(2)
    }

    /// Positivity against the declared bounds on the grid and convexity of J
    /// in u by sampled second differences.
    pub fn validate(&self, grid: &Grid1D) -> Result<()> {
        let (lo, hi) = self.u_box;
        if !(lo < hi) {
            return Err(Error::Model(format!("empty control box [{lo}, {hi}]")));
        }
        if !(self.sigma_ind_lower > 0.0) {
            return Err(Error::Coefficient(format!("declared σ_ind lower bound {} not positive", self.sigma_ind_lower)));
        }
        if self.has_common_noise() && !(self.sigma_com_lower > 0.0) {
            return Err(Error::Coefficient(format!("declared σ_com lower bound {} not positive", self.sigma_com_lower)));
        }
        for x in grid.points() {
            let s = self.sigma_ind.value(x);
            if s < self.sigma_ind_lower * (1.0 - 1e-12) {
                return Err(Error::Coefficient(format!("σ_ind({x}) = {s} below declared bound {}", self.sigma_ind_lower)));
            }
            if self.has_common_noise() {
                let a = self.sigma_com.value(x);
                if a < self.sigma_com_lower * (1.0 - 1e-12) {
                    return Err(Error::Coefficient(format!("σ_com({x}) = {a} below declared bound {}", self.sigma_com_lower)));
                }
            }
        }
        self.check_convexity()
    }

    /// Second differences of u ↦ J on 65 sample points of the box.
    pub fn check_convexity(&self) -> Result<()> {
        let (lo, hi) = self.u_box;
        let k = 64;
        let du = (hi - lo) / k as f64;
        for i in 1..k {
            let u = lo + i as f64 * du;
            let j = |v: f64| self.running_cost.control_part(v);
            let second = j(u + du) - 2.0 * j(u) + j(u - du);
            if !(second > 0.0) {
                return Err(Error::Model(format!("running cost not strictly convex near u = {u}")));
            }
        }
        Ok(())
    }

    pub fn drift_moments(&self, mu: &MeasureRef) -> DriftMoments {
        DriftMoments { b1: self.b1.moments(mu), b2: self.b2.moments(mu) }
    }

    /// b₁ + b₂u with precomputed moments, no box check.
    pub fn drift_with(&self, x: f64, dm: &DriftMoments, u: f64) -> f64 {
        self.b1.eval(x, &dm.b1) + self.b2.eval(x, &dm.b2) * u
    }

    pub fn check_control(&self, u: f64) -> Result<()> {
        let (lo, hi) = self.u_box;
        if u >= lo && u <= hi {
            Ok(())
        } else {
            Err(Error::ControlBounds { u, lo, hi })
        }
    }
}

/// b(x, μ, u) = b₁(x, μ) + b₂(x, μ) u; u must lie in the control box.
pub fn drift(coeffs: &ModelCoefficients, x: f64, mu: &MeasureRef, u: f64) -> Result<f64> {
    coeffs.check_control(u)?;
    Ok(coeffs.drift_with(x, &coeffs.drift_moments(mu), u))
}
