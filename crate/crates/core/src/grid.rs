//! Uniform 1D grid, densities on it, trapezoid quadrature, difference
//! stencils and mollified point masses.
//!
//! Every module integrates with the same trapezoid weights
//!
//! ```text
//! w_0 = w_{n-1} = h/2,   w_j = h otherwise
//! ```
//!
//! so discrete conservation statements elsewhere hold exactly.

use crate::error::{Error, Result};
use std::fmt::Write as _;

/// Gaussian tails beyond this many bandwidths are dropped (below 1e-21).
const KERNEL_CUTOFF: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid1D {
    x_min: f64,
    x_max: f64,
    n_points: usize,
    h: f64,
}

impl Grid1D {
    pub fn new(x_min: f64, x_max: f64, n_points: usize) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite()) || x_min >= x_max {
            return Err(Error::Argument(format!("grid bounds [{x_min}, {x_max}] must satisfy x_min < x_max")));
        }
        if n_points < 8 {
            return Err(Error::Argument(format!("grid needs at least 8 points, got {n_points}")));
        }
        let h = (x_max - x_min) / (n_points - 1) as f64;
        Ok(Self { x_min, x_max, n_points, h })
    }

    /// Grid with spacing `h` covering at least `[x_min, x_max]`, left end anchored.
    pub fn with_spacing(x_min: f64, x_max: f64, h: f64) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::Argument(format!("spacing {h} must be positive")));
        }
        let cells = ((x_max - x_min) / h - 1e-9).ceil().max(7.0) as usize;
        Self::new(x_min, x_min + cells as f64 * h, cells + 1)
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    pub fn n(&self) -> usize {
        self.n_points
    }
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn x(&self, i: usize) -> f64 {
        if i + 1 == self.n_points {
            self.x_max
        } else {
            self.x_min + i as f64 * self.h
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.x(i)).collect()
    }

    pub fn weight(&self, i: usize) -> f64 {
        if i == 0 || i + 1 == self.n_points {
            0.5 * self.h
        } else {
            self.h
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.weight(i)).collect()
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.x_min && x <= self.x_max
    }

    /// Grid refined by halving the spacing.
    pub fn refined(&self) -> Self {
        Self::new(self.x_min, self.x_max, 2 * self.n_points - 1).expect("refinement of a valid grid")
    }

    /// Same spacing, extended by at least `pad` on both sides.
    pub fn padded(&self, pad: f64) -> Self {
        let k = (pad / self.h).ceil() as usize;
        let lo = self.x_min - k as f64 * self.h;
        Self::new(lo, self.x_max + k as f64 * self.h, self.n_points + 2 * k).expect("padding a valid grid")
    }

    /// Trapezoid integral of nodal values.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        let n = values.len();
        let inner: f64 = values[1..n - 1].iter().sum();
        self.h * (inner + 0.5 * (values[0] + values[n - 1]))
    }

    pub fn integrate_fn(&self, f: impl Fn(f64) -> f64) -> f64 {
        (0..self.n_points).map(|i| self.weight(i) * f(self.x(i))).sum()
    }
}

/// A signed density sampled on the nodes of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMeasure {
    pub grid: Grid1D,
    pub density: Vec<f64>,
}

impl GridMeasure {
    pub fn new(grid: Grid1D, density: Vec<f64>) -> Result<Self> {
        if density.len() != grid.n() {
            return Err(Error::Dimension { expected: grid.n(), got: density.len() });
        }
        Ok(Self { grid, density })
    }

    pub fn zeros(grid: &Grid1D) -> Self {
        Self { grid: grid.clone(), density: vec![0.0; grid.n()] }
    }

    pub fn from_fn(grid: &Grid1D, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: grid.clone(), density: grid.points().into_iter().map(f).collect() }
    }

    /// Normal density with the given mean and standard deviation, renormalized
    /// to unit discrete mass.
    pub fn gaussian(grid: &Grid1D, mean: f64, std: f64) -> Self {
        let mut m = Self::from_fn(grid, |x| (-0.5 * ((x - mean) / std).powi(2)).exp());
        let mass = m.mass();
        m.density.iter_mut().for_each(|d| *d /= mass);
        m
    }

    pub fn mass(&self) -> f64 {
        self.grid.integrate(&self.density)
    }

    pub fn total_variation(&self) -> f64 {
        (0..self.grid.n()).map(|i| self.grid.weight(i) * self.density[i].abs()).sum()
    }

    pub fn negative_mass(&self) -> f64 {
        (0..self.grid.n()).map(|i| self.grid.weight(i) * (-self.density[i]).max(0.0)).sum()
    }

    /// Raw moment `∫ x^p dμ`.
    pub fn moment(&self, p: i32) -> f64 {
        (0..self.grid.n()).map(|i| self.grid.weight(i) * self.grid.x(i).powi(p) * self.density[i]).sum()
    }

    pub fn integrate_fn(&self, f: impl Fn(f64) -> f64) -> f64 {
        (0..self.grid.n()).map(|i| self.grid.weight(i) * f(self.grid.x(i)) * self.density[i]).sum()
    }

    /// Checks the probability invariants: mass within `mass_tol` of one and
    /// density bounded below by `-neg_tol`.
    pub fn check_probability(&self, mass_tol: f64, neg_tol: f64) -> Result<()> {
        let mass = self.mass();
        if (mass - 1.0).abs() > mass_tol {
            return Err(Error::Conservation(format!("mass {mass} differs from 1 by more than {mass_tol}")));
        }
        if let Some(d) = self.density.iter().find(|d| **d < -neg_tol) {
            return Err(Error::Conservation(format!("density value {d} below -{neg_tol}")));
        }
        Ok(())
    }

    pub fn l1_distance(&self, other: &GridMeasure) -> f64 {
        (0..self.grid.n())
            .map(|i| self.grid.weight(i) * (self.density[i] - other.density[i]).abs())
            .sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { grid: self.grid.clone(), density: self.density.iter().map(|d| c * d).collect() }
    }

    /// `self + c * other`.
    pub fn axpy(&self, c: f64, other: &GridMeasure) -> Self {
        let density = self.density.iter().zip(&other.density).map(|(a, b)| a + c * b).collect();
        Self { grid: self.grid.clone(), density }
    }

    /// Two-column CSV `x,density` with header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,density\n");
        for (i, d) in self.density.iter().enumerate() {
            let _ = writeln!(s, "{},{}", self.grid.x(i), d);
        }
        s
    }
}

/// Trapezoid quadrature of `(φ, m)`.
pub fn pair(phi_values: &[f64], m: &GridMeasure) -> Result<f64> {
    if phi_values.len() != m.grid.n() {
        return Err(Error::Dimension { expected: m.grid.n(), got: phi_values.len() });
    }
    Ok((0..m.grid.n()).map(|i| m.grid.weight(i) * phi_values[i] * m.density[i]).sum())
}

fn check_bandwidth(grid: &Grid1D, bandwidth: f64) -> Result<()> {
    if !(bandwidth >= 2.0 * grid.h() * (1.0 - 1e-12)) {
        return Err(Error::Domain(format!("bandwidth {bandwidth} below twice the grid spacing {}", grid.h())));
    }
    Ok(())
}

/// Adds the unnormalized Gaussian bump at `x0` times `scale` into `out`.
fn add_kernel(grid: &Grid1D, x0: f64, bandwidth: f64, scale: f64, out: &mut [f64]) {
    let h = grid.h();
    let lo = (((x0 - KERNEL_CUTOFF * bandwidth) - grid.x_min()) / h).floor().max(0.0) as usize;
    let hi = ((((x0 + KERNEL_CUTOFF * bandwidth) - grid.x_min()) / h).ceil() as usize).min(grid.n() - 1);
    let inv = 1.0 / (2.0 * bandwidth * bandwidth);
    let mut bump = Vec::with_capacity(hi + 1 - lo);
    let mut mass = 0.0;
    for i in lo..=hi {
        let v = (-(grid.x(i) - x0).powi(2) * inv).exp();
        mass += grid.weight(i) * v;
        bump.push(v);
    }
    for (k, v) in bump.into_iter().enumerate() {
        out[lo + k] += scale * v / mass;
    }
}

/// Gaussian bump at `x0`, renormalized to discrete mass exactly one.
pub fn mollified_delta(grid: &Grid1D, x0: f64, bandwidth: f64) -> Result<GridMeasure> {
    check_bandwidth(grid, bandwidth)?;
    if x0 < grid.x_min() + 4.0 * bandwidth || x0 > grid.x_max() - 4.0 * bandwidth {
        return Err(Error::Domain(format!(
            "bump point {x0} closer than 4 bandwidths to the boundary of [{}, {}]",
            grid.x_min(),
            grid.x_max()
        )));
    }
    let mut density = vec![0.0; grid.n()];
    add_kernel(grid, x0, bandwidth, 1.0, &mut density);
    Ok(GridMeasure { grid: grid.clone(), density })
}

/// Smoothed empirical measure `(δ_{x_1}+…+δ_{x_N})/N`. Positions closer than
/// four bandwidths to the boundary are clamped; the count is returned.
pub fn empirical_to_grid(positions: &[f64], grid: &Grid1D, bandwidth: f64) -> Result<(GridMeasure, usize)> {
    if positions.is_empty() {
        return Err(Error::Argument("empirical measure of zero particles".into()));
    }
    check_bandwidth(grid, bandwidth)?;
    let lo = grid.x_min() + 4.0 * bandwidth;
    let hi = grid.x_max() - 4.0 * bandwidth;
    if lo > hi {
        return Err(Error::Domain(format!("bandwidth {bandwidth} too wide for the grid")));
    }
    let mut clamped = 0;
    let mut density = vec![0.0; grid.n()];
    let scale = 1.0 / positions.len() as f64;
    for &x in positions {
        let xc = if x.is_nan() { 0.5 * (lo + hi) } else { x.clamp(lo, hi) };
        if xc != x {
            clamped += 1;
        }
        add_kernel(grid, xc, bandwidth, scale, &mut density);
    }
    Ok((GridMeasure { grid: grid.clone(), density }, clamped))
}

/// First derivative: central in the interior, one-sided second order at the ends.
pub fn diff1_values(grid: &Grid1D, f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let h = grid.h();
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        d[i] = (f[i + 1] - f[i - 1]) / (2.0 * h);
    }
    d[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h);
    d[n - 1] = (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * h);
    d
}

/// Second derivative: central in the interior, one-sided second order at the ends.
pub fn diff2_values(grid: &Grid1D, f: &[f64]) -> Vec<f64> {
    let n = f.len();
    let h2 = grid.h() * grid.h();
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        d[i] = (f[i + 1] - 2.0 * f[i] + f[i - 1]) / h2;
    }
    d[0] = (2.0 * f[0] - 5.0 * f[1] + 4.0 * f[2] - f[3]) / h2;
    d[n - 1] = (2.0 * f[n - 1] - 5.0 * f[n - 2] + 4.0 * f[n - 3] - f[n - 4]) / h2;
    d
}

pub fn diff1(m: &GridMeasure) -> GridMeasure {
    GridMeasure { grid: m.grid.clone(), density: diff1_values(&m.grid, &m.density) }
}

pub fn diff2(m: &GridMeasure) -> GridMeasure {
    GridMeasure { grid: m.grid.clone(), density: diff2_values(&m.grid, &m.density) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit() -> Grid1D {
        Grid1D::new(0.0, 1.0, 101).unwrap()
    }

    #[test]
    fn grid_invariants() {
        assert!(Grid1D::new(0.0, 1.0, 7).is_err());
        assert!(Grid1D::new(1.0, 1.0, 10).is_err());
        let g = unit();
        assert!((g.h() - 0.01).abs() < 1e-15);
        assert_eq!(g.x(100), 1.0);
    }

    #[test]
    fn pair_examples() {
        let g = unit();
        let m = GridMeasure::from_fn(&g, |_| 1.0);
        assert!((pair(&vec![1.0; 101], &m).unwrap() - 1.0).abs() < 1e-12);

        let gs = Grid1D::new(-1.0, 1.0, 201).unwrap();
        let sym = GridMeasure::from_fn(&gs, |x| (-x * x).exp());
        assert!(pair(&gs.points(), &sym).unwrap().abs() < 1e-12);

        let bw = 0.05;
        let d = mollified_delta(&g, 0.5, bw).unwrap();
        let x2: Vec<f64> = g.points().iter().map(|x| x * x).collect();
        // Gaussian second moment: m^2 + σ^2.
        assert!((pair(&x2, &d).unwrap() - (0.25 + bw * bw)).abs() < 1e-3);

        assert_eq!(pair(&[1.0; 3], &m), Err(Error::Dimension { expected: 101, got: 3 }));
    }

    #[test]
    fn mollified_delta_examples() {
        let g = Grid1D::new(-5.0, 5.0, 501).unwrap();
        let d = mollified_delta(&g, 0.0, 0.1).unwrap();
        assert!((d.mass() - 1.0).abs() < 1e-12);
        assert!(d.moment(1).abs() < 1e-10);
        assert!(matches!(mollified_delta(&g, 4.99, 0.1), Err(Error::Domain(_))));
        assert!(mollified_delta(&g, 0.0, 0.01).is_err());
    }

    #[test]
    fn diff_examples() {
        let g = Grid1D::new(-1.0, 2.0, 61).unwrap();
        let c = GridMeasure::from_fn(&g, |_| 3.5);
        assert!(diff1(&c).density.iter().all(|v| v.abs() < 1e-12));
        assert!(diff2(&c).density.iter().all(|v| v.abs() < 1e-9));
        let lin = GridMeasure::from_fn(&g, |x| x);
        let d = diff1(&lin);
        assert!(d.density[1..60].iter().all(|v| (v - 1.0).abs() < 1e-10));

        // Analytic oracle: (sin)'' = -sin, error O(h^2).
        let gp = Grid1D::new(0.0, std::f64::consts::PI, 401).unwrap();
        let s = GridMeasure::from_fn(&gp, f64::sin);
        let d2 = diff2(&s);
        let err = (1..400).map(|i| (d2.density[i] + gp.x(i).sin()).abs()).fold(0.0, f64::max);
        assert!(err <= gp.h() * gp.h(), "err {err}");
        // One-sided boundary stencils are second order too.
        assert!((d2.density[0] + 0.0).abs() < 20.0 * gp.h() * gp.h());
    }

    #[test]
    fn empirical_examples() {
        let g = Grid1D::new(-5.0, 5.0, 501).unwrap();
        let (e, c) = empirical_to_grid(&[0.0], &g, 0.1).unwrap();
        assert_eq!(c, 0);
        assert_eq!(e, mollified_delta(&g, 0.0, 0.1).unwrap());
        let (e2, _) = empirical_to_grid(&[-1.0, 1.0], &g, 0.1).unwrap();
        assert!(e2.moment(1).abs() < 1e-8);
        assert!(matches!(empirical_to_grid(&[], &g, 0.1), Err(Error::Argument(_))));
        let (_, clamped) = empirical_to_grid(&[10.0, 0.0], &g, 0.1).unwrap();
        assert_eq!(clamped, 1);
    }

    #[test]
    fn empirical_second_moment_of_normal_sample() {
        let g = Grid1D::new(-8.0, 8.0, 801).unwrap();
        let mut xs = vec![0.0; 10_000];
        crate::rng::fill_normals(5, crate::rng::STREAM_AUX, 0, &mut xs);
        let (e, _) = empirical_to_grid(&xs, &g, 0.1).unwrap();
        assert!((e.mass() - 1.0).abs() < 1e-8);
        // Smoothing adds bw^2 = 0.01; sampling error about 0.014.
        assert!((e.moment(2) - 1.0).abs() < 0.05);
    }

    #[test]
    fn csv_has_header() {
        let g = Grid1D::new(0.0, 1.0, 8).unwrap();
        let csv = GridMeasure::zeros(&g).to_csv();
        assert!(csv.starts_with("x,density\n0,0\n"));
        assert_eq!(csv.lines().count(), 9);
    }

    proptest! {
        #[test]
        fn pair_is_bilinear(a in -3.0f64..3.0, b in -3.0f64..3.0, c in -2.0f64..2.0) {
            let g = Grid1D::new(-2.0, 2.0, 41).unwrap();
            let m = GridMeasure::from_fn(&g, |x| (-(x - c).powi(2)).exp());
            let phi: Vec<f64> = g.points().iter().map(|x| x.sin()).collect();
            let psi: Vec<f64> = g.points().iter().map(|x| x * x).collect();
            let comb: Vec<f64> = phi.iter().zip(&psi).map(|(p, q)| a * p + b * q).collect();
            let lhs = pair(&comb, &m).unwrap();
            let rhs = a * pair(&phi, &m).unwrap() + b * pair(&psi, &m).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn delta_mass_is_one(x0 in -3.0f64..3.0, bw in 0.05f64..0.4) {
            let g = Grid1D::new(-5.0, 5.0, 401).unwrap();
            let d = mollified_delta(&g, x0, bw).unwrap();
            prop_assert!((d.mass() - 1.0).abs() < 1e-13);
        }
    }
}
