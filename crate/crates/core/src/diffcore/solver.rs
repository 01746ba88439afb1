use std::io::Write;

use ndarray::s;

use super::batch::Cond;
use super::ops::{ddim_ode_step, euler_ode_step};
use super::schedule::{NoiseSchedule, ScheduleKind};
use crate::par::Exec;
use crate::{Error, Mat, Result};

/// A velocity-parameterised model `v(x_t, t)`.
pub trait VelocityModel: Sync {
    fn velocity(&self, x: &Mat, t: &[f64], cond: Cond<'_>) -> Result<Mat>;
}

/// A noise-parameterised model `ε(x_t, t)`.
pub trait NoiseModel: Sync {
    fn noise(&self, x: &Mat, t: &[f64], cond: Cond<'_>) -> Result<Mat>;
}

impl<M: VelocityModel + ?Sized> VelocityModel for &M {
    fn velocity(&self, x: &Mat, t: &[f64], cond: Cond<'_>) -> Result<Mat> {
        (**self).velocity(x, t, cond)
    }
}

/// States visited by a PF-ODE solve, `states[k]` at `times[k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Mat>,
}

impl Trajectory {
    pub fn endpoint(&self) -> &Mat {
        self.states.last().expect("trajectories hold at least the start")
    }

    /// Long CSV: header `t,dim0,dim1,...`, one row per (time, sample).
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let d = self.states.first().map_or(0, |m| m.ncols());
        let header: Vec<String> = (0..d).map(|j| format!("dim{j}")).collect();
        writeln!(out, "t,{}", header.join(","))?;
        for (t, m) in self.times.iter().zip(&self.states) {
            for row in m.rows() {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
                writeln!(out, "{t:e},{}", cells.join(","))?;
            }
        }
        Ok(())
    }
}

/// `steps + 1` equally spaced points from `T` down to 0.
pub fn uniform_points(horizon: f64, steps: usize) -> Vec<f64> {
    (0..=steps)
        .map(|k| {
            if k == steps {
                0.0
            } else {
                horizon * (steps - k) as f64 / steps as f64
            }
        })
        .collect()
}

fn check_points(sched: &NoiseSchedule, points: &[f64]) -> Result<()> {
    if points.len() < 2 {
        return Err(Error::Rejected("a solve needs at least [T, 0]".into()));
    }
    if points.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Rejected("schedule points must be strictly decreasing".into()));
    }
    if points[0] != sched.horizon() || *points.last().unwrap() != 0.0 {
        return Err(Error::Rejected(format!(
            "schedule must run from T = {} to 0",
            sched.horizon()
        )));
    }
    Ok(())
}

/// Euler solve of `dx = v(x, t) dt` through `points`, recording each state.
pub fn solve_pf_ode<M: VelocityModel + ?Sized>(
    sched: &NoiseSchedule,
    model: &M,
    z: &Mat,
    cond: Cond<'_>,
    points: &[f64],
) -> Result<Trajectory> {
    sched.require(ScheduleKind::FlowLinear, "solve_pf_ode")?;
    check_points(sched, points)?;
    cond.check_rows(z.nrows())?;
    let mut states = Vec::with_capacity(points.len());
    states.push(z.clone());
    for w in points.windows(2) {
        let x = states.last().unwrap();
        let v = model.velocity(x, &[w[0]], cond)?;
        let next = euler_ode_step(sched, x, &v, &[w[0]], &[w[1]])?;
        states.push(next);
    }
    Ok(Trajectory {
        times: points.to_vec(),
        states,
    })
}

/// DDIM solve in rescaled coordinates through `points`.
pub fn solve_pf_ode_ddim<M: NoiseModel + ?Sized>(
    sched: &NoiseSchedule,
    model: &M,
    z: &Mat,
    cond: Cond<'_>,
    points: &[f64],
) -> Result<Trajectory> {
    sched.require(ScheduleKind::VpDiscrete, "solve_pf_ode_ddim")?;
    check_points(sched, points)?;
    cond.check_rows(z.nrows())?;
    let mut states = Vec::with_capacity(points.len());
    states.push(z.clone());
    for w in points.windows(2) {
        let x = states.last().unwrap();
        let eps = model.noise(x, &[w[0]], cond)?;
        states.push(ddim_ode_step(sched, x, &eps, w[0], w[1])?);
    }
    Ok(Trajectory {
        times: points.to_vec(),
        states,
    })
}

/// Rows per independent chunk in [`sample_endpoints`].
pub const CHUNK_ROWS: usize = 512;

/// Endpoints of Euler solves for a large batch. Rows are split into fixed
/// chunks of [`CHUNK_ROWS`] that are solved independently, so the result
/// does not depend on `exec`.
pub fn sample_endpoints<M: VelocityModel + ?Sized>(
    sched: &NoiseSchedule,
    model: &M,
    z: &Mat,
    cond: Cond<'_>,
    points: &[f64],
    exec: Exec,
) -> Result<Mat> {
    sched.require(ScheduleKind::FlowLinear, "sample_endpoints")?;
    check_points(sched, points)?;
    cond.check_rows(z.nrows())?;
    let n = z.nrows();
    let chunks = n.div_ceil(CHUNK_ROWS);
    let parts = exec.map(chunks, |c| {
        let range = c * CHUNK_ROWS..((c + 1) * CHUNK_ROWS).min(n);
        let zc = z.slice(s![range.clone(), ..]).to_owned();
        let mut x = zc;
        for w in points.windows(2) {
            let v = model.velocity(&x, &[w[0]], cond.slice(range.clone()))?;
            x = euler_ode_step(sched, &x, &v, &[w[0]], &[w[1]])?;
        }
        Ok::<Mat, Error>(x)
    });
    let mut out = Mat::zeros(z.dim());
    for (c, part) in parts.into_iter().enumerate() {
        let part = part?;
        let lo = c * CHUNK_ROWS;
        out.slice_mut(s![lo..lo + part.nrows(), ..]).assign(&part);
    }
    Ok(out)
}
