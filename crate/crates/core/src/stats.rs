//! Small estimators shared by the experiments: sample means, log-log slope
//! fits with Student-t intervals, and seed bootstraps.

use crate::rng::UniformStream;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Mean and standard error of the mean.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    /// Two-sided 95% interval for the slope.
    pub ci_low: f64,
    pub ci_high: f64,
    /// One-sided 95% upper bound.
    pub upper_95: f64,
    pub n_points: usize,
}

/// Ordinary least squares of log y on log x.
pub fn loglog_fit(xs: &[f64], ys: &[f64]) -> Option<SlopeFit> {
    let pts: Vec<(f64, f64)> = xs.iter().zip(ys).filter(|(x, y)| **x > 0.0 && **y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = pts.len();
    if n < 3 {
        return None;
    }
    let nf = n as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let stderr = (rss / (nf - 2.0) / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, nf - 2.0).ok()?;
    let t975 = t.inverse_cdf(0.975);
    let t95 = t.inverse_cdf(0.95);
    Some(SlopeFit {
        slope,
        intercept,
        stderr,
        ci_low: slope - t975 * stderr,
        ci_high: slope + t975 * stderr,
        upper_95: slope + t95 * stderr,
        n_points: n,
    })
}

/// Percentile bootstrap over rows: `stat` is evaluated on `reps` resamples
/// of the row indices; returns the requested quantile of the replicates.
pub fn bootstrap_quantile(
    n_rows: usize,
    reps: usize,
    quantile: f64,
    seed: u64,
    stream: u64,
    stat: impl Fn(&[usize]) -> f64,
) -> f64 {
    let mut rng = UniformStream::new(seed, stream);
    let mut values: Vec<f64> = (0..reps)
        .map(|_| {
            let idx: Vec<usize> = (0..n_rows).map(|_| rng.next_index(n_rows)).collect();
            stat(&idx)
        })
        .collect();
    values.sort_by(f64::total_cmp);
    let pos = ((reps as f64 - 1.0) * quantile).round() as usize;
    values[pos.min(reps - 1)]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law() {
        let xs = [50.0, 100.0, 200.0, 400.0, 800.0];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 / x).collect();
        let f = loglog_fit(&xs, &ys).unwrap();
        assert!((f.slope + 1.0).abs() < 1e-12);
        assert!(f.stderr < 1e-10);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn interval_matches_textbook() {
        // t quantile for 3 degrees of freedom, two-sided 95%.
        let xs = [1.0f64, 2.0, 3.0, 4.0, 5.0].map(f64::exp);
        let ys = [1.0f64, 2.2, 2.8, 4.1, 5.0].map(f64::exp);
        let f = loglog_fit(&xs, &ys).unwrap();
        assert!((f.slope - 0.99).abs() < 1e-12);
        assert!(((f.ci_high - f.slope) / f.stderr - 3.182446305284263).abs() < 1e-6);
    }

    #[test]
    fn bootstrap_of_mean() {
        let xs: Vec<f64> = (0..200).map(|i| (i % 7) as f64).collect();
        let (m, se) = mean_stderr(&xs);
        let q = bootstrap_quantile(xs.len(), 2000, 0.975, 1, 99, |idx| idx.iter().map(|i| xs[*i]).sum::<f64>() / idx.len() as f64);
        assert!(((q - m) / se - 1.96).abs() < 0.25);
    }
}
