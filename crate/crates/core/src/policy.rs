//! Feedback controls u(t, x, μ).

use crate::grid::Grid1D;
use crate::model::MeasureRef;

pub trait Policy: Sync {
    fn control(&self, t: f64, x: f64, mu: &MeasureRef) -> f64;

    /// Whether `control` reads its measure argument. Callers skip building
    /// smoothed measures for policies that do not.
    fn measure_dependent(&self) -> bool {
        false
    }
}

/// u ≡ c.
#[derive(Debug, Clone, Copy)]
pub struct ConstPolicy(pub f64);

impl Policy for ConstPolicy {
    fn control(&self, _t: f64, _x: f64, _mu: &MeasureRef) -> f64 {
        self.0
    }
}

/// Measure-free feedback given by a closure of (t, x).
pub struct FnPolicy<F: Fn(f64, f64) -> f64 + Sync>(pub F);

impl<F: Fn(f64, f64) -> f64 + Sync> Policy for FnPolicy<F> {
    fn control(&self, t: f64, x: f64, _mu: &MeasureRef) -> f64 {
        (self.0)(t, x)
    }
}

/// u = −k (x − m₁(μ)): steers toward the crowd mean.
#[derive(Debug, Clone, Copy)]
pub struct MeanReverting(pub f64);

impl Policy for MeanReverting {
    fn control(&self, _t: f64, x: f64, mu: &MeasureRef) -> f64 {
        -self.0 * (x - mu.integrate(|y| y))
    }
    fn measure_dependent(&self) -> bool {
        true
    }
}

/// Feedback tabulated on a time–space grid: row n holds u on `[t_n, t_{n+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyField {
    pub dt: f64,
    pub grid: Grid1D,
    pub u_values: Vec<Vec<f64>>,
    /// Free-form description of the measure path this field was computed against.
    pub context: String,
}

impl PolicyField {
    pub fn constant(dt: f64, n_steps: usize, grid: &Grid1D, c: f64) -> Self {
        Self { dt, grid: grid.clone(), u_values: vec![vec![c; grid.n()]; n_steps], context: "constant".into() }
    }

    pub fn n_steps(&self) -> usize {
        self.u_values.len()
    }

    pub fn step_index(&self, t: f64) -> usize {
        let n = (t / self.dt + 1e-9).floor().max(0.0) as usize;
        n.min(self.u_values.len() - 1)
    }

    /// Linear interpolation in x, constant extrapolation beyond the grid.
    pub fn at_step(&self, n: usize, x: f64) -> f64 {
        let row = &self.u_values[n.min(self.u_values.len() - 1)];
        let g = &self.grid;
        if x <= g.x_min() {
            return row[0];
        }
        if x >= g.x_max() {
            return row[g.n() - 1];
        }
        let pos = (x - g.x_min()) / g.h();
        let i = (pos.floor() as usize).min(g.n() - 2);
        let s = pos - i as f64;
        row[i] * (1.0 - s) + row[i + 1] * s
    }

    /// Max-norm distance over the space–time grid.
    pub fn max_diff(&self, other: &PolicyField) -> f64 {
        self.u_values
            .iter()
            .zip(&other.u_values)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }

    /// Long-format CSV `t,x,u`.
    pub fn to_csv(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::from("t,x,u\n");
        for (n, row) in self.u_values.iter().enumerate() {
            for (i, u) in row.iter().enumerate() {
                let _ = writeln!(s, "{},{},{}", n as f64 * self.dt, self.grid.x(i), u);
            }
        }
        s
    }
}

impl Policy for PolicyField {
    fn control(&self, t: f64, x: f64, _mu: &MeasureRef) -> f64 {
        self.at_step(self.step_index(t), x)
    }
}
