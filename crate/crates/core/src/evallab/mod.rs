//! Histogram densities, divergence estimators against Gaussian oracles,
//! mode coverage and sample diversity.

mod metrics;

use serde::{Deserialize, Serialize};

use crate::{Error, Mat, Result};

pub use metrics::{read_metrics, series_of, MetricRow, MetricsLog};

pub const DEFAULT_EPS_MASS: f64 = 1e-10;

/// Axis-aligned grid of equal bins over a box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub bins: Vec<usize>,
}

impl Grid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, bins: Vec<usize>) -> Result<Self> {
        let g = Self { lo, hi, bins };
        g.validate()?;
        Ok(g)
    }

    /// 128 × 128 bins over `[-8, 8]²`.
    pub fn ring_default() -> Self {
        Self::square(-8.0, 8.0, 128)
    }

    pub fn square(lo: f64, hi: f64, bins: usize) -> Self {
        Self {
            lo: vec![lo; 2],
            hi: vec![hi; 2],
            bins: vec![bins; 2],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.lo.len();
        if d == 0 || self.hi.len() != d || self.bins.len() != d {
            return Err(Error::Config("grid bounds and bin counts differ in length".into()));
        }
        for j in 0..d {
            if !(self.hi[j] > self.lo[j]) || self.bins[j] == 0 {
                return Err(Error::Config(format!("degenerate grid axis {j}")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn num_bins(&self) -> usize {
        self.bins.iter().product()
    }

    pub fn width(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / self.bins[axis] as f64
    }

    pub fn bin_volume(&self) -> f64 {
        (0..self.dim()).map(|j| self.width(j)).product()
    }

    /// Flat index of the bin holding `x`; points outside the box fall in the
    /// nearest edge bin.
    pub fn locate(&self, x: &[f64]) -> usize {
        let mut idx = 0;
        for j in 0..self.dim() {
            let k = ((x[j] - self.lo[j]) / self.width(j)).floor();
            let k = if k.is_nan() { 0.0 } else { k.clamp(0.0, (self.bins[j] - 1) as f64) };
            idx = idx * self.bins[j] + k as usize;
        }
        idx
    }

    pub fn center(&self, flat: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        let mut rem = flat;
        for j in (0..self.dim()).rev() {
            let k = rem % self.bins[j];
            rem /= self.bins[j];
            out[j] = self.lo[j] + (k as f64 + 0.5) * self.width(j);
        }
        out
    }
}

/// Probability mass over a [`Grid`], floored by `eps_mass` per bin.
#[derive(Clone, Debug, PartialEq)]
pub struct HistDensity {
    pub grid: Grid,
    pub mass: Vec<f64>,
    pub eps_mass: f64,
}

impl HistDensity {
    fn from_raw(grid: Grid, raw: Vec<f64>, eps_mass: f64) -> Result<Self> {
        if !(eps_mass > 0.0) {
            return Err(Error::Config("eps_mass must be > 0".into()));
        }
        let total: f64 = raw.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::Rejected("histogram has no mass".into()));
        }
        let mut mass: Vec<f64> = raw.iter().map(|c| c / total + eps_mass).collect();
        let z: f64 = mass.iter().sum();
        mass.iter_mut().for_each(|m| *m /= z);
        Ok(Self { grid, mass, eps_mass })
    }

    pub fn from_samples(points: &Mat, grid: Grid, eps_mass: f64) -> Result<Self> {
        grid.validate()?;
        if points.ncols() != grid.dim() {
            return Err(Error::Shape(format!(
                "{}-d samples on a {}-d grid",
                points.ncols(),
                grid.dim()
            )));
        }
        let mut counts = vec![0.0; grid.num_bins()];
        for row in points.rows() {
            if row.iter().all(|z| z.is_finite()) {
                counts[grid.locate(row.as_slice().unwrap_or(&row.to_vec()))] += 1.0;
            }
        }
        Self::from_raw(grid, counts, eps_mass)
    }

    /// Discretises a density by evaluating it at bin centres.
    pub fn from_density(grid: Grid, eps_mass: f64, pdf: impl Fn(&[f64]) -> f64) -> Result<Self> {
        grid.validate()?;
        let raw = (0..grid.num_bins()).map(|i| pdf(&grid.center(i)).max(0.0)).collect();
        Self::from_raw(grid, raw, eps_mass)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    KlForward,
    KlReverse,
    Js,
    Tvd,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::KlForward, Metric::KlReverse, Metric::Js, Metric::Tvd];

    pub fn name(self) -> &'static str {
        match self {
            Metric::KlForward => "kl_forward",
            Metric::KlReverse => "kl_reverse",
            Metric::Js => "js",
            Metric::Tvd => "tvd",
        }
    }
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| if a > 0.0 { a * (a / b).ln() } else { 0.0 })
        .sum::<f64>()
        .max(0.0)
}

/// Divergence between `p` (the model, "fake") and `q` (the reference):
/// `kl_reverse = KL(p‖q)`, `kl_forward = KL(q‖p)`, `tvd = ½ Σ|p − q|`.
pub fn divergence(p: &HistDensity, q: &HistDensity, metric: Metric) -> Result<f64> {
    if p.grid != q.grid {
        return Err(Error::Rejected("divergence between histograms on different grids".into()));
    }
    let (p, q) = (&p.mass, &q.mass);
    Ok(match metric {
        Metric::KlReverse => kl(p, q),
        Metric::KlForward => kl(q, p),
        Metric::Js => {
            let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
            0.5 * kl(p, &m) + 0.5 * kl(q, &m)
        }
        Metric::Tvd => 0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>(),
    })
}

/// `KL(N(μ₁, diag Σ₁) ‖ N(μ₂, diag Σ₂))` with variances given per axis.
pub fn gaussian_kl_closed_form(mu1: &[f64], var1: &[f64], mu2: &[f64], var2: &[f64]) -> Result<f64> {
    let d = mu1.len();
    if var1.len() != d || mu2.len() != d || var2.len() != d {
        return Err(Error::Shape("Gaussian parameters differ in dimension".into()));
    }
    if var1.iter().chain(var2).any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::Rejected("covariance must be positive definite".into()));
    }
    let mut out = 0.0;
    for j in 0..d {
        let dm = mu2[j] - mu1[j];
        out += var1[j] / var2[j] + dm * dm / var2[j] - 1.0 + (var2[j] / var1[j]).ln();
    }
    Ok(0.5 * out)
}

/// Mode centres with a capture radius and a minimum hit fraction.
#[derive(Clone, Debug, PartialEq)]
pub struct ModeSpec {
    pub centers: Vec<Vec<f64>>,
    pub radius: f64,
    /// Fraction of all samples a mode must capture to count as covered.
    pub min_fraction: f64,
}

impl ModeSpec {
    pub fn new(centers: Vec<Vec<f64>>, radius: f64, min_fraction: f64) -> Result<Self> {
        if centers.is_empty() {
            return Err(Error::Config("no mode centres".into()));
        }
        if !(radius > 0.0) {
            return Err(Error::Config("capture radius must be > 0".into()));
        }
        for i in 0..centers.len() {
            for j in 0..i {
                if centers[i] == centers[j] {
                    return Err(Error::Config(format!("modes {j} and {i} coincide")));
                }
            }
        }
        Ok(Self {
            centers,
            radius,
            min_fraction,
        })
    }

    /// Radius `3σ` and 2% minimum mass.
    pub fn for_dataset(ds: &crate::datasets::ToyDataset) -> Self {
        Self::new(ds.mode_centers(), 3.0 * ds.component_std(), 0.02).expect("dataset modes are distinct")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Coverage {
    pub fraction: f64,
    pub covered: usize,
    /// Samples assigned to each mode and lying within the radius.
    pub counts: Vec<usize>,
}

pub fn mode_coverage(samples: &Mat, spec: &ModeSpec) -> Coverage {
    let mut counts = vec![0usize; spec.centers.len()];
    for row in samples.rows() {
        let mut best = (f64::INFINITY, 0usize);
        for (k, c) in spec.centers.iter().enumerate() {
            let d2: f64 = row.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
            if d2 < best.0 {
                best = (d2, k);
            }
        }
        if best.0.sqrt() <= spec.radius {
            counts[best.1] += 1;
        }
    }
    let need = spec.min_fraction * samples.nrows() as f64;
    let covered = counts.iter().filter(|&&c| c > 0 && c as f64 >= need).count();
    Coverage {
        fraction: covered as f64 / spec.centers.len() as f64,
        covered,
        counts,
    }
}

/// Mean over unordered pairs of sets of the mean L2 distance between rows
/// with the same index.
pub fn pairwise_diversity(sets: &[Mat]) -> Result<f64> {
    if sets.len() < 2 {
        return Err(Error::Rejected("diversity needs at least two sample sets".into()));
    }
    let shape = sets[0].dim();
    if sets.iter().any(|s| s.dim() != shape) || shape.0 == 0 {
        return Err(Error::Shape("sample sets must share a non-empty shape".into()));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for a in 0..sets.len() {
        for b in a + 1..sets.len() {
            let d = &sets[a] - &sets[b];
            let mean: f64 = d
                .rows()
                .into_iter()
                .map(|r| r.iter().map(|z| z * z).sum::<f64>().sqrt())
                .sum::<f64>()
                / shape.0 as f64;
            total += mean;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Kolmogorov-Smirnov statistic `sup |F_n − F|` of `samples` against `cdf`.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Large-sample 1% critical value of the one-sample KS statistic.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}
