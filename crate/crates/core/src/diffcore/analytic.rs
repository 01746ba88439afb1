//! Closed-form posterior velocity fields of Gaussian mixtures under the
//! linear flow schedule, used as oracle teachers.

use super::batch::{row_times, Cond, NULL_CLASS};
use super::solver::VelocityModel;
use crate::{Error, Mat, Result};

/// Isotropic Gaussian component `N(μ, s² I)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Component {
    pub mean: Vec<f64>,
    pub std: f64,
    pub weight: f64,
}

/// Exact `E[ε − x₀ | x_t]` for `x₀` drawn from an isotropic Gaussian
/// mixture. Labels restrict the posterior to one component.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureFlow {
    pub components: Vec<Component>,
}

impl MixtureFlow {
    /// Standard normal data, `v(x, t) = (2t − 1)/((1 − t)² + t²) · x`.
    pub fn standard_normal(dim: usize) -> Self {
        Self {
            components: vec![Component {
                mean: vec![0.0; dim],
                std: 1.0,
                weight: 1.0,
            }],
        }
    }

    pub fn dim(&self) -> usize {
        self.components[0].mean.len()
    }

    fn velocity_row(&self, x: &[f64], t: f64, label: usize) -> Vec<f64> {
        let d = x.len();
        let a = 1.0 - t;
        let comps: Vec<usize> = if label == NULL_CLASS {
            (0..self.components.len()).collect()
        } else {
            vec![label]
        };
        // Log responsibilities for numerical stability.
        let mut logw = Vec::with_capacity(comps.len());
        let mut vels = Vec::with_capacity(comps.len());
        for &k in &comps {
            let c = &self.components[k];
            let var = a * a * c.std * c.std + t * t;
            let mut sq = 0.0;
            let mut v = vec![0.0; d];
            for j in 0..d {
                let r = x[j] - a * c.mean[j];
                sq += r * r;
                let e_x0 = c.mean[j] + a * c.std * c.std / var * r;
                let e_eps = t / var * r;
                v[j] = e_eps - e_x0;
            }
            logw.push(c.weight.ln() - 0.5 * sq / var - 0.5 * d as f64 * var.ln());
            vels.push(v);
        }
        let mx = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logw.iter().map(|l| (l - mx).exp()).collect();
        let total: f64 = w.iter().sum();
        let mut out = vec![0.0; d];
        for (wk, v) in w.iter().zip(&vels) {
            for j in 0..d {
                out[j] += wk / total * v[j];
            }
        }
        out
    }
}

impl VelocityModel for MixtureFlow {
    fn velocity(&self, x: &Mat, t: &[f64], cond: Cond<'_>) -> Result<Mat> {
        if x.ncols() != self.dim() {
            return Err(Error::Shape(format!(
                "mixture of dimension {} given {} columns",
                self.dim(),
                x.ncols()
            )));
        }
        cond.check_rows(x.nrows())?;
        let ts = row_times(t, x.nrows())?;
        let mut out = Mat::zeros(x.dim());
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            let label = cond.label(i);
            if label != NULL_CLASS && label >= self.components.len() {
                return Err(Error::Rejected(format!("label {label} out of range")));
            }
            let xr = x.row(i).to_vec();
            let v = self.velocity_row(&xr, ts[i], label);
            row.assign(&ndarray::ArrayView1::from(&v));
        }
        Ok(out)
    }
}
