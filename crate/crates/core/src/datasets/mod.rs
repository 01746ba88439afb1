//! Synthetic ground-truth distributions.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffcore::analytic::{Component, MixtureFlow};
use crate::diffcore::SampleBatch;
use crate::{Error, Mat, Result};

/// Toy distribution in data space. Mixtures label each sample with the
/// index of its generating component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ToyDataset {
    /// `modes` isotropic Gaussians equally spaced on a circle.
    GmmRing { modes: usize, radius: f64, std: f64 },
    /// `side × side` Gaussians on a square lattice centred at the origin.
    GmmGrid { side: usize, spacing: f64, std: f64 },
    SingleGaussian { dim: usize, std: f64 },
    /// Two interleaved half circles with Gaussian jitter, scaled by 2.
    TwoMoons { noise: f64 },
}

impl Default for ToyDataset {
    fn default() -> Self {
        Self::ring8()
    }
}

impl ToyDataset {
    /// The default benchmark: 8 modes on a radius-4 circle, std 0.2.
    pub fn ring8() -> Self {
        ToyDataset::GmmRing {
            modes: 8,
            radius: 4.0,
            std: 0.2,
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "ring8" => Ok(Self::ring8()),
            "grid9" => Ok(ToyDataset::GmmGrid {
                side: 3,
                spacing: 3.0,
                std: 0.2,
            }),
            "gaussian" => Ok(ToyDataset::SingleGaussian { dim: 2, std: 1.0 }),
            "moons" => Ok(ToyDataset::TwoMoons { noise: 0.1 }),
            other => Err(Error::Config(format!("unknown dataset '{other}'"))),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ToyDataset::SingleGaussian { dim, .. } => *dim,
            _ => 2,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            ToyDataset::GmmRing { modes, .. } => *modes,
            ToyDataset::GmmGrid { side, .. } => side * side,
            ToyDataset::SingleGaussian { .. } => 1,
            ToyDataset::TwoMoons { .. } => 2,
        }
    }

    /// Equal-weight mixture components, or `None` for kinds without a
    /// closed-form density.
    pub fn components(&self) -> Option<Vec<Component>> {
        let comps = match *self {
            ToyDataset::GmmRing { modes, radius, std } => (0..modes)
                .map(|k| {
                    let a = 2.0 * PI * k as f64 / modes as f64;
                    (vec![radius * a.cos(), radius * a.sin()], std)
                })
                .collect::<Vec<_>>(),
            ToyDataset::GmmGrid { side, spacing, std } => {
                let off = (side as f64 - 1.0) / 2.0;
                (0..side * side)
                    .map(|k| {
                        let (i, j) = ((k / side) as f64, (k % side) as f64);
                        (vec![(i - off) * spacing, (j - off) * spacing], std)
                    })
                    .collect()
            }
            ToyDataset::SingleGaussian { dim, std } => vec![(vec![0.0; dim], std)],
            ToyDataset::TwoMoons { .. } => return None,
        };
        let w = 1.0 / comps.len() as f64;
        Some(
            comps
                .into_iter()
                .map(|(mean, std)| Component {
                    mean,
                    std,
                    weight: w,
                })
                .collect(),
        )
    }

    /// Mode centres used by coverage metrics.
    pub fn mode_centers(&self) -> Vec<Vec<f64>> {
        match self.components() {
            Some(c) => c.into_iter().map(|c| c.mean).collect(),
            // Mean of each moon after the affine map in `sample`.
            None => vec![vec![-1.0, 2.0 * (2.0 / PI) - 0.5], vec![1.0, 2.0 * (0.5 - 2.0 / PI) - 0.5]],
        }
    }

    /// Per-component standard deviation (jitter for the moons).
    pub fn component_std(&self) -> f64 {
        match *self {
            ToyDataset::GmmRing { std, .. }
            | ToyDataset::GmmGrid { std, .. }
            | ToyDataset::SingleGaussian { std, .. } => std,
            ToyDataset::TwoMoons { noise } => 2.0 * noise,
        }
    }

    /// Exact posterior velocity field of the mixture under the linear flow.
    pub fn flow(&self) -> Result<MixtureFlow> {
        self.components()
            .map(|components| MixtureFlow { components })
            .ok_or_else(|| Error::Unsupported("no closed form for two_moons".into()))
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<SampleBatch> {
        if n == 0 {
            return Err(Error::Rejected("sample count must be ≥ 1".into()));
        }
        let d = self.dim();
        let mut points = Mat::zeros((n, d));
        let mut labels = Vec::with_capacity(n);
        match self.components() {
            Some(comps) => {
                for i in 0..n {
                    let k = rng.random_range(0..comps.len());
                    for j in 0..d {
                        let e: f64 = rng.sample(StandardNormal);
                        points[[i, j]] = comps[k].mean[j] + comps[k].std * e;
                    }
                    labels.push(k);
                }
            }
            None => {
                let ToyDataset::TwoMoons { noise } = *self else {
                    unreachable!()
                };
                for i in 0..n {
                    let k = rng.random_range(0..2usize);
                    let a = PI * rng.random::<f64>();
                    let (x, y) = if k == 0 {
                        (a.cos(), a.sin())
                    } else {
                        (1.0 - a.cos(), 0.5 - a.sin())
                    };
                    let ex: f64 = rng.sample(StandardNormal);
                    let ey: f64 = rng.sample(StandardNormal);
                    points[[i, 0]] = 2.0 * (x + noise * ex) - 1.0;
                    points[[i, 1]] = 2.0 * (y + noise * ey) - 0.5;
                    labels.push(k);
                }
            }
        }
        SampleBatch::with_labels(points, labels)
    }

    /// Exact mixture log-density at `x`.
    pub fn true_log_density(&self, x: &[f64]) -> Result<f64> {
        let comps = self
            .components()
            .ok_or_else(|| Error::Unsupported("two_moons has no closed-form density".into()))?;
        if x.len() != self.dim() {
            return Err(Error::Shape(format!("point of dim {} for dim {}", x.len(), self.dim())));
        }
        let d = x.len() as f64;
        let logs: Vec<f64> = comps
            .iter()
            .map(|c| {
                let sq: f64 = x.iter().zip(&c.mean).map(|(a, m)| (a - m) * (a - m)).sum();
                c.weight.ln()
                    - 0.5 * sq / (c.std * c.std)
                    - d * c.std.ln()
                    - 0.5 * d * (2.0 * PI).ln()
            })
            .collect();
        let mx = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(mx + logs.iter().map(|l| (l - mx).exp()).sum::<f64>().ln())
    }
}
