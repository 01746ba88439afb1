//! Seeded random streams split hierarchically by purpose.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::Mat;

pub type StageRng = ChaCha8Rng;

/// Derives a child seed from a parent seed and a purpose label.
pub fn derive_seed(seed: u64, purpose: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(purpose.as_bytes());
    let out = h.finalize();
    let mut b = [0u8; 8];
    b.copy_from_slice(&out[..8]);
    u64::from_le_bytes(b)
}

/// Independent generator for `purpose` under `seed`.
pub fn stream(seed: u64, purpose: &str) -> StageRng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, purpose))
}

pub fn normal_mat<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Mat {
    Mat::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// Uniform draws on `[lo, hi)`.
pub fn uniform_vec<R: Rng + ?Sized>(rng: &mut R, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect()
}
