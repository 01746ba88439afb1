use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::diffcore::{sample_endpoints, uniform_points, Cond, NoiseSchedule, VelocityModel, NULL_CLASS};
use crate::par::Exec;
use crate::rng::{derive_seed, normal_mat, stream};
use crate::{Error, Mat, Result};

/// Stored label meaning the null class.
pub const NULL_LABEL: u32 = u32::MAX;

/// Teacher `(x_T, x₀)` pairs, one per row, with the seed that produced each
/// noise vector.
#[derive(Clone, Debug, PartialEq)]
pub struct OdePairDataset {
    pub seeds: Vec<u64>,
    pub labels: Vec<usize>,
    pub noise: Mat,
    pub data: Mat,
}

/// A minibatch drawn from an [`OdePairDataset`].
#[derive(Clone, Debug, PartialEq)]
pub struct PairBatch {
    pub noise: Mat,
    pub data: Mat,
    pub labels: Vec<usize>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.noise.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cond(&self) -> Cond<'_> {
        Cond::Labels(&self.labels)
    }
}

/// Seed of pair `index` under collection seed `seed`.
pub fn pair_seed(seed: u64, index: u64) -> u64 {
    derive_seed(seed, "ode_pairs").wrapping_add(index)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollectSpec {
    pub n: usize,
    /// Euler steps per teacher solve.
    pub steps: usize,
    pub seed: u64,
    /// Conditional collections draw a uniform label per pair.
    pub num_classes: Option<usize>,
}

/// Solves the teacher PF-ODE from fresh noise for every pair.
pub fn collect_ode_pairs<M: VelocityModel + ?Sized>(
    sched: &NoiseSchedule,
    teacher: &M,
    dim: usize,
    spec: &CollectSpec,
    exec: Exec,
) -> Result<OdePairDataset> {
    let CollectSpec {
        n,
        steps,
        seed,
        num_classes,
    } = *spec;
    if n == 0 || steps == 0 || dim == 0 {
        return Err(Error::Rejected("pair count, step count and dimension must be ≥ 1".into()));
    }
    let seeds: Vec<u64> = (0..n as u64).map(|i| pair_seed(seed, i)).collect();
    let mut noise = Mat::zeros((n, dim));
    let mut labels = Vec::with_capacity(n);
    for (i, &s) in seeds.iter().enumerate() {
        let mut rng = stream(s, "x_T");
        noise.row_mut(i).assign(&normal_mat(&mut rng, 1, dim).row(0));
        labels.push(match num_classes {
            Some(k) => rng.random_range(0..k),
            None => NULL_CLASS,
        });
    }
    let points = uniform_points(sched.horizon(), steps);
    let data = sample_endpoints(sched, teacher, &noise, Cond::Labels(&labels), &points, exec)?;
    Ok(OdePairDataset {
        seeds,
        labels,
        noise,
        data,
    })
}

/// `x_t = (1 − t/T) x₀ + (t/T) x_T`.
pub fn interpolate_pair(x0: &[f64], x_t: &[f64], t: f64, horizon: f64) -> Result<Vec<f64>> {
    if !(0.0..=horizon).contains(&t) {
        return Err(Error::Rejected(format!("time {t} outside [0, {horizon}]")));
    }
    if x0.len() != x_t.len() {
        return Err(Error::Shape("pair halves differ in dimension".into()));
    }
    let s = t / horizon;
    Ok(x0.iter().zip(x_t).map(|(a, b)| (1.0 - s) * a + s * b).collect())
}

/// Row-wise [`interpolate_pair`] on a batch.
pub fn interpolate_batch(batch: &PairBatch, t: &[f64], horizon: f64) -> Result<Mat> {
    if t.len() != batch.len() {
        return Err(Error::Shape("one time per pair required".into()));
    }
    let mut out = Mat::zeros(batch.data.dim());
    for i in 0..batch.len() {
        let row = interpolate_pair(
            batch.data.row(i).as_slice().expect("standard layout"),
            batch.noise.row(i).as_slice().expect("standard layout"),
            t[i],
            horizon,
        )?;
        out.row_mut(i).assign(&ndarray::ArrayView1::from(&row));
    }
    Ok(out)
}

impl OdePairDataset {
    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.noise.ncols()
    }

    pub fn batch(&self, idx: &[usize]) -> PairBatch {
        let d = self.dim();
        PairBatch {
            noise: Mat::from_shape_fn((idx.len(), d), |(i, j)| self.noise[[idx[i], j]]),
            data: Mat::from_shape_fn((idx.len(), d), |(i, j)| self.data[[idx[i], j]]),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Records of `[seed u64, label u32, d u32, x_T, x₀]`, little endian.
    pub fn encode(&self) -> Vec<u8> {
        let d = self.dim();
        let mut out = Vec::with_capacity(self.len() * (16 + 16 * d));
        for i in 0..self.len() {
            out.extend(self.seeds[i].to_le_bytes());
            let l = if self.labels[i] == NULL_CLASS {
                NULL_LABEL
            } else {
                self.labels[i] as u32
            };
            out.extend(l.to_le_bytes());
            out.extend((d as u32).to_le_bytes());
            for v in self.noise.row(i).iter().chain(self.data.row(i).iter()) {
                out.extend(v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            let s = bytes
                .get(*pos..*pos + n)
                .ok_or_else(|| Error::Format(format!("pair file truncated at byte {}", *pos)))?;
            *pos += n;
            Ok(s)
        };
        let (mut seeds, mut labels, mut vals) = (Vec::new(), Vec::new(), Vec::new());
        let mut dim = None;
        while pos < bytes.len() {
            seeds.push(u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
            let l = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
            labels.push(if l == NULL_LABEL { NULL_CLASS } else { l as usize });
            let d = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            if d == 0 || *dim.get_or_insert(d) != d {
                return Err(Error::Format(format!("inconsistent record dimension {d}")));
            }
            for chunk in take(&mut pos, 16 * d)?.chunks_exact(8) {
                vals.push(f64::from_le_bytes(chunk.try_into().unwrap()));
            }
        }
        let d = dim.ok_or_else(|| Error::Format("empty pair file".into()))?;
        let n = seeds.len();
        let noise = Mat::from_shape_fn((n, d), |(i, j)| vals[i * 2 * d + j]);
        let data = Mat::from_shape_fn((n, d), |(i, j)| vals[i * 2 * d + d + j]);
        Ok(Self {
            seeds,
            labels,
            noise,
            data,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::decode(&bytes)
    }
}
