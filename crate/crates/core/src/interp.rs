//! Piecewise cubic Hermite interpolation on a uniform grid.

use crate::grid::Grid1D;

/// Cubic Hermite interpolant from nodal values and nodal slopes.
#[derive(Debug, Clone)]
pub struct Hermite {
    pub grid: Grid1D,
    pub values: Vec<f64>,
    pub slopes: Vec<f64>,
}

fn hermite_cell(y0: f64, y1: f64, d0: f64, d1: f64, h: f64, s: f64) -> f64 {
    let s2 = s * s;
    let s3 = s2 * s;
    (2.0 * s3 - 3.0 * s2 + 1.0) * y0 + (s3 - 2.0 * s2 + s) * h * d0 + (-2.0 * s3 + 3.0 * s2) * y1 + (s3 - s2) * h * d1
}

fn hermite_cell_deriv(y0: f64, y1: f64, d0: f64, d1: f64, h: f64, s: f64) -> f64 {
    let s2 = s * s;
    ((6.0 * s2 - 6.0 * s) * y0 + (-6.0 * s2 + 6.0 * s) * y1) / h + (3.0 * s2 - 4.0 * s + 1.0) * d0 + (3.0 * s2 - 2.0 * s) * d1
}

impl Hermite {
    /// Monotone (Fritsch–Carlson) slopes: the interpolant never overshoots
    /// the data, so nonnegative data stay nonnegative.
    pub fn monotone(grid: &Grid1D, values: &[f64]) -> Self {
        let n = values.len();
        let h = grid.h();
        let delta: Vec<f64> = (0..n - 1).map(|i| (values[i + 1] - values[i]) / h).collect();
        let mut slopes = vec![0.0; n];
        for i in 1..n - 1 {
            let (a, b) = (delta[i - 1], delta[i]);
            if a * b > 0.0 {
                slopes[i] = 2.0 * a * b / (a + b);
            }
        }
        slopes[0] = end_slope(delta[0], delta[1]);
        slopes[n - 1] = end_slope(delta[n - 2], delta[n - 3]);
        Self { grid: grid.clone(), values: values.to_vec(), slopes }
    }

    /// Slopes from centered differences (one-sided at the ends). The
    /// interpolant is linear in the data and exact for cubics inside.
    pub fn centered(grid: &Grid1D, values: &[f64]) -> Self {
        Self { grid: grid.clone(), values: values.to_vec(), slopes: crate::grid::diff1_values(grid, values) }
    }

    pub fn with_slopes(grid: &Grid1D, values: Vec<f64>, slopes: Vec<f64>) -> Self {
        Self { grid: grid.clone(), values, slopes }
    }

    fn locate(&self, x: f64) -> (usize, f64) {
        let h = self.grid.h();
        let n = self.grid.n();
        let pos = (x - self.grid.x_min()) / h;
        let i = (pos.floor().max(0.0) as usize).min(n - 2);
        (i, (pos - i as f64).clamp(0.0, 1.0))
    }

    /// Interpolated value; `outside` beyond the grid ends.
    pub fn eval_or(&self, x: f64, outside: f64) -> f64 {
        if !self.grid.contains(x) {
            return outside;
        }
        let (i, s) = self.locate(x);
        hermite_cell(self.values[i], self.values[i + 1], self.slopes[i], self.slopes[i + 1], self.grid.h(), s)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let (i, s) = self.locate(x);
        hermite_cell(self.values[i], self.values[i + 1], self.slopes[i], self.slopes[i + 1], self.grid.h(), s)
    }

    pub fn deriv(&self, x: f64) -> f64 {
        let (i, s) = self.locate(x);
        hermite_cell_deriv(self.values[i], self.values[i + 1], self.slopes[i], self.slopes[i + 1], self.grid.h(), s)
    }

    /// Inverse of a strictly increasing interpolant; `None` outside its range.
    pub fn inverse(&self, y: f64) -> Option<f64> {
        let n = self.values.len();
        if !(y >= self.values[0] && y <= self.values[n - 1]) {
            return None;
        }
        let i = match self.values.binary_search_by(|v| v.partial_cmp(&y).unwrap()) {
            Ok(i) => return Some(self.grid.x(i)),
            Err(i) => i - 1,
        };
        let (y0, y1, d0, d1, h) = (self.values[i], self.values[i + 1], self.slopes[i], self.slopes[i + 1], self.grid.h());
        // Safeguarded Newton on the cell parameter.
        let (mut lo, mut hi) = (0.0, 1.0);
        let mut s = (y - y0) / (y1 - y0);
        for _ in 0..60 {
            let f = hermite_cell(y0, y1, d0, d1, h, s) - y;
            if f.abs() <= 1e-15 * (1.0 + y.abs()) {
                break;
            }
            if f > 0.0 {
                hi = s;
            } else {
                lo = s;
            }
            let df = hermite_cell_deriv(y0, y1, d0, d1, h, s) * h;
            let next = s - f / df;
            s = if df > 0.0 && next > lo && next < hi { next } else { 0.5 * (lo + hi) };
            if hi - lo < 1e-16 {
                break;
            }
        }
        Some(self.grid.x_min() + (i as f64 + s) * h)
    }
}

fn end_slope(d0: f64, d1: f64) -> f64 {
    let s = 1.5 * d0 - 0.5 * d1;
    if s * d0 <= 0.0 {
        0.0
    } else if d0 * d1 <= 0.0 && s.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_nodes_and_stays_nonnegative() {
        let g = Grid1D::new(-3.0, 3.0, 61).unwrap();
        let v: Vec<f64> = g.points().iter().map(|x| (-4.0 * x * x).exp()).collect();
        let p = Hermite::monotone(&g, &v);
        for i in 0..61 {
            assert!((p.eval(g.x(i)) - v[i]).abs() < 1e-14);
        }
        for k in 0..6000 {
            let x = -3.0 + k as f64 * 1e-3;
            assert!(p.eval(x) >= 0.0);
        }
        assert_eq!(p.eval_or(3.5, 0.0), 0.0);
    }

    #[test]
    fn inverse_of_increasing_table() {
        let g = Grid1D::new(0.0, 2.0, 21).unwrap();
        let vals: Vec<f64> = g.points().iter().map(|x| x + 0.3 * x.sin()).collect();
        let slopes: Vec<f64> = g.points().iter().map(|x| 1.0 + 0.3 * x.cos()).collect();
        let p = Hermite::with_slopes(&g, vals, slopes);
        for k in 0..200 {
            let x = k as f64 * 0.01;
            let y = p.eval(x);
            assert!((p.inverse(y).unwrap() - x).abs() < 1e-12);
        }
        assert!(p.inverse(-1.0).is_none());
    }
}
