use super::batch::row_times;
use super::schedule::{NoiseSchedule, ScheduleKind};
use crate::{Error, Mat, Result};

fn same_shape(a: &Mat, b: &Mat, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

/// Combines rows as `out[i] = a_i·x[i] + b_i·y[i]`.
fn combine_rows(x: &Mat, y: &Mat, coeffs: impl Fn(usize) -> (f64, f64)) -> Mat {
    let mut out = Mat::zeros(x.dim());
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let (a, b) = coeffs(i);
        let (xr, yr) = (x.row(i), y.row(i));
        for j in 0..row.len() {
            row[j] = a * xr[j] + b * yr[j];
        }
    }
    out
}

/// `x_t = α_t x₀ + σ_t ε`, with one time per row (or one shared time).
pub fn forward_diffuse(sched: &NoiseSchedule, x0: &Mat, eps: &Mat, t: &[f64]) -> Result<Mat> {
    same_shape(x0, eps, "forward_diffuse")?;
    let ts = row_times(t, x0.nrows())?;
    let coeffs = ts
        .iter()
        .map(|&ti| sched.alpha_sigma(ti))
        .collect::<Result<Vec<_>>>()?;
    Ok(combine_rows(x0, eps, |i| coeffs[i]))
}

/// Conditional velocity `v = (dα/dt) x₀ + (dσ/dt) ε`, which is `ε − x₀`
/// for the linear flow schedule.
pub fn flow_velocity_target(sched: &NoiseSchedule, x0: &Mat, eps: &Mat) -> Result<Mat> {
    sched.require(ScheduleKind::FlowLinear, "velocity target")?;
    same_shape(x0, eps, "flow_velocity_target")?;
    Ok(eps - x0)
}

/// Inverts the linear flow: `x̂₀ = x_t − t·v`.
pub fn endpoint_from_velocity(sched: &NoiseSchedule, x_t: &Mat, v: &Mat, t: &[f64]) -> Result<Mat> {
    sched
        .require(ScheduleKind::FlowLinear, "endpoint_from_velocity")
        .map_err(|_| Error::Rejected("VP schedules convert with epsilon_to_x0".into()))?;
    same_shape(x_t, v, "endpoint_from_velocity")?;
    let ts = row_times(t, x_t.nrows())?;
    for &ti in &ts {
        sched.check_time(ti)?;
    }
    Ok(combine_rows(x_t, v, |i| (1.0, -ts[i])))
}

/// `x̂₀ = (x_t − σ_t ε̂)/α_t`.
pub fn epsilon_to_x0(sched: &NoiseSchedule, x_t: &Mat, eps_hat: &Mat, t: &[f64]) -> Result<Mat> {
    same_shape(x_t, eps_hat, "epsilon_to_x0")?;
    let ts = row_times(t, x_t.nrows())?;
    let mut coeffs = Vec::with_capacity(ts.len());
    for &ti in &ts {
        let (a, s) = sched.alpha_sigma(ti)?;
        if a <= 0.0 {
            return Err(Error::Rejected(format!(
                "singular conversion: α_t = 0 at t = {ti}"
            )));
        }
        coeffs.push((1.0 / a, -s / a));
    }
    Ok(combine_rows(x_t, eps_hat, |i| coeffs[i]))
}

/// `ε̂ = (x_t − α_t x̂₀)/σ_t`.
pub fn x0_to_epsilon(sched: &NoiseSchedule, x_t: &Mat, x0_hat: &Mat, t: &[f64]) -> Result<Mat> {
    same_shape(x_t, x0_hat, "x0_to_epsilon")?;
    let ts = row_times(t, x_t.nrows())?;
    let mut coeffs = Vec::with_capacity(ts.len());
    for &ti in &ts {
        let (a, s) = sched.alpha_sigma(ti)?;
        if s <= 0.0 {
            return Err(Error::Rejected(format!(
                "singular conversion: σ_t = 0 at t = {ti}"
            )));
        }
        coeffs.push((1.0 / s, -a / s));
    }
    Ok(combine_rows(x_t, x0_hat, |i| coeffs[i]))
}

/// Reverse-time Euler step `x_{t'} = x_t + v·(t' − t)`, per row.
pub fn euler_ode_step(
    sched: &NoiseSchedule,
    x_t: &Mat,
    v: &Mat,
    t: &[f64],
    t_next: &[f64],
) -> Result<Mat> {
    sched.require(ScheduleKind::FlowLinear, "euler_ode_step")?;
    same_shape(x_t, v, "euler_ode_step")?;
    let n = x_t.nrows();
    let (ts, tn) = (row_times(t, n)?, row_times(t_next, n)?);
    for (&a, &b) in ts.iter().zip(&tn) {
        sched.check_time(a)?;
        sched.check_time(b)?;
        if b >= a {
            return Err(Error::Rejected(format!(
                "reverse-time solver needs t_next < t, got {b} ≥ {a}"
            )));
        }
    }
    Ok(combine_rows(x_t, v, |i| (1.0, tn[i] - ts[i])))
}

/// DDIM step in rescaled coordinates: `x̄' = x̄ + ε̂·(σ̄' − σ̄)`, then back via
/// `x' = √ᾱ'·x̄'`.
pub fn ddim_ode_step(
    sched: &NoiseSchedule,
    x_t: &Mat,
    eps_hat: &Mat,
    t: f64,
    t_next: f64,
) -> Result<Mat> {
    sched.require(ScheduleKind::VpDiscrete, "ddim_ode_step")?;
    same_shape(x_t, eps_hat, "ddim_ode_step")?;
    if t_next > t {
        return Err(Error::Rejected(format!(
            "reverse-time solver needs t_next ≤ t, got {t_next} > {t}"
        )));
    }
    if t_next == t {
        return Ok(x_t.clone());
    }
    let (ab, ab_next) = (sched.alpha_bar(t)?, sched.alpha_bar(t_next)?);
    let (sb, sb_next) = (sched.sigma_bar(t)?, sched.sigma_bar(t_next)?);
    let scale_in = 1.0 / ab.sqrt();
    let scale_out = ab_next.sqrt();
    let dsb = sb_next - sb;
    let mut out = Mat::zeros(x_t.dim());
    ndarray::Zip::from(&mut out)
        .and(x_t)
        .and(eps_hat)
        .for_each(|o, &x, &e| *o = (x * scale_in + e * dsb) * scale_out);
    Ok(out)
}
