use crate::{Error, Mat, Result};

pub const DEFAULT_TEMB_DIM: usize = 32;

/// Ratio between the highest and the lowest embedding frequency.
const FREQ_SPAN: f64 = 100.0;

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::Config(format!(
            "time embedding dimension must be even and positive, got {dim}"
        )));
    }
    Ok(())
}

fn frequency(k: usize, half: usize, horizon: f64) -> f64 {
    let expo = if half > 1 {
        k as f64 / (half - 1) as f64
    } else {
        0.0
    };
    FREQ_SPAN.powf(expo) / horizon
}

/// Sinusoidal embedding: `dim/2` sines then `dim/2` cosines over
/// frequencies spaced geometrically from `1/horizon` to `100/horizon`.
pub fn time_embed(t: f64, dim: usize, horizon: f64) -> Result<Vec<f64>> {
    check_dim(dim)?;
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let a = frequency(k, half, horizon) * t;
        out[k] = a.sin();
        out[half + k] = a.cos();
    }
    Ok(out)
}

/// Row `i` holds `time_embed(ts[i], dim, horizon)`.
pub fn embed_times(ts: &[f64], dim: usize, horizon: f64) -> Result<Mat> {
    check_dim(dim)?;
    let mut out = Mat::zeros((ts.len(), dim));
    for (i, &t) in ts.iter().enumerate() {
        let row = time_embed(t, dim, horizon)?;
        out.row_mut(i).assign(&ndarray::ArrayView1::from(&row));
    }
    Ok(out)
}
