//! Histogram divergence estimates against Gaussian oracles.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::evallab::{divergence, gaussian_kl_closed_form, Grid, HistDensity, Metric, DEFAULT_EPS_MASS};
use crate::{Error, Result};

/// A univariate Gaussian `N(mean, var)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gauss {
    pub mean: f64,
    pub var: f64,
}

impl Gauss {
    pub fn new(mean: f64, var: f64) -> Result<Self> {
        if !(var > 0.0) || !mean.is_finite() || !var.is_finite() {
            return Err(Error::Config(format!("invalid Gaussian N({mean}, {var})")));
        }
        Ok(Self { mean, var })
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        -0.5 * (x - self.mean).powi(2) / self.var - 0.5 * (2.0 * PI * self.var).ln()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.log_pdf(x).exp()
    }
}

/// Composite Simpson rule on `[lo, hi]` with `n` (even) intervals.
fn simpson(lo: f64, hi: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let h = (hi - lo) / n as f64;
    let mut s = f(lo) + f(hi);
    for i in 1..n {
        s += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn support(p: Gauss, q: Gauss, width: f64) -> (f64, f64) {
    let s = p.var.max(q.var).sqrt();
    (p.mean.min(q.mean) - width * s, p.mean.max(q.mean) + width * s)
}

/// Reference value of `metric(p, q)` with `p` the model density: KL in
/// closed form, JS and TVD by fine quadrature of the exact densities.
pub fn gaussian_oracle(p: Gauss, q: Gauss, metric: Metric) -> Result<f64> {
    let (lo, hi) = support(p, q, 14.0);
    const N: usize = 400_000;
    Ok(match metric {
        Metric::KlReverse => gaussian_kl_closed_form(&[p.mean], &[p.var], &[q.mean], &[q.var])?,
        Metric::KlForward => gaussian_kl_closed_form(&[q.mean], &[q.var], &[p.mean], &[p.var])?,
        Metric::Js => simpson(lo, hi, N, |x| {
            let (lp, lq) = (p.log_pdf(x), q.log_pdf(x));
            let lm = (0.5 * (lp.exp() + lq.exp())).ln();
            if !lm.is_finite() {
                return 0.0;
            }
            0.5 * (lp.exp() * (lp - lm) + lq.exp() * (lq - lm))
        }),
        Metric::Tvd => 0.5 * simpson(lo, hi, N, |x| (p.pdf(x) - q.pdf(x)).abs()),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DivRow {
    pub metric: Metric,
    pub estimate: f64,
    pub oracle: f64,
}

impl DivRow {
    pub fn rel_err(&self) -> f64 {
        ((self.estimate - self.oracle) / self.oracle).abs()
    }
}

/// Histogram estimates of all four divergences of `p` from `q` on a
/// `bins`-bin line grid spanning ±10 standard deviations.
pub fn divlab(p: Gauss, q: Gauss, bins: usize) -> Result<Vec<DivRow>> {
    let (lo, hi) = support(p, q, 10.0);
    let grid = Grid::new(vec![lo], vec![hi], vec![bins])?;
    let hp = HistDensity::from_density(grid.clone(), DEFAULT_EPS_MASS, |x| p.pdf(x[0]))?;
    let hq = HistDensity::from_density(grid, DEFAULT_EPS_MASS, |x| q.pdf(x[0]))?;
    Metric::ALL
        .iter()
        .map(|&metric| {
            Ok(DivRow {
                metric,
                estimate: divergence(&hp, &hq, metric)?,
                oracle: gaussian_oracle(p, q, metric)?,
            })
        })
        .collect()
}
