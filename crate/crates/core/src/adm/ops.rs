use serde::{Deserialize, Serialize};

use crate::diffcore::{endpoint_from_velocity, euler_ode_step, Cond, NoiseSchedule, VelocityModel};
use crate::nnad::{Tape, Var};
use crate::scorenets::ScoreNet;
use crate::{Error, Mat, Result};

/// Floor of the per-sample normaliser in [`dmd_gradient`].
pub const DMD_DENOM_FLOOR: f64 = 1e-8;

/// Generator sampling points `t_N > … > t_0 = 0`, stored from `t_N` down.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct GeneratorSchedule {
    points: Vec<f64>,
}

impl TryFrom<Vec<f64>> for GeneratorSchedule {
    type Error = Error;

    fn try_from(points: Vec<f64>) -> Result<Self> {
        Self::new(points)
    }
}

impl From<GeneratorSchedule> for Vec<f64> {
    fn from(s: GeneratorSchedule) -> Self {
        s.points
    }
}

impl GeneratorSchedule {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Config("a generator schedule needs t_N and t_0".into()));
        }
        if points.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::Config("generator schedule must strictly decrease".into()));
        }
        if *points.last().unwrap() != 0.0 {
            return Err(Error::Config("generator schedule must end at 0".into()));
        }
        Ok(Self { points })
    }

    pub fn one_step(horizon: f64) -> Self {
        Self {
            points: vec![horizon, 0.0],
        }
    }

    pub fn four_step(horizon: f64) -> Self {
        Self {
            points: [1.0, 0.75, 0.5, 0.25, 0.0].iter().map(|p| p * horizon).collect(),
        }
    }

    /// Number of generator steps `N`.
    pub fn steps(&self) -> usize {
        self.points.len() - 1
    }

    /// `t_n` for `0 ≤ n ≤ N`.
    pub fn time(&self, n: usize) -> f64 {
        self.points[self.steps() - n]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn check_horizon(&self, horizon: f64) -> Result<()> {
        if self.points[0] != horizon {
            return Err(Error::Config(format!(
                "generator schedule starts at {}, horizon is {horizon}",
                self.points[0]
            )));
        }
        Ok(())
    }
}

/// Euler rollout of the generator from `z` at `t_N` down to `t_n` without
/// gradients.
pub fn multi_step_rollout<M: VelocityModel + ?Sized>(
    sched: &NoiseSchedule,
    gen: &M,
    z: &Mat,
    cond: Cond<'_>,
    n: usize,
    schedule: &GeneratorSchedule,
) -> Result<Mat> {
    if n == 0 || n > schedule.steps() {
        return Err(Error::Rejected(format!(
            "rollout index {n} outside 1..={}",
            schedule.steps()
        )));
    }
    rollout_to(sched, gen, z, cond, n, schedule)
}

fn rollout_to<M: VelocityModel + ?Sized>(
    sched: &NoiseSchedule,
    gen: &M,
    z: &Mat,
    cond: Cond<'_>,
    n: usize,
    schedule: &GeneratorSchedule,
) -> Result<Mat> {
    let mut x = z.clone();
    for k in (n + 1..=schedule.steps()).rev() {
        let (t, t_next) = (schedule.time(k), schedule.time(k - 1));
        let v = gen.velocity(&x, &[t], cond)?;
        x = euler_ode_step(sched, &x, &v, &[t], &[t_next])?;
    }
    Ok(x)
}

/// Full `N`-step generation from `z`.
pub fn generate<M: VelocityModel + ?Sized>(
    sched: &NoiseSchedule,
    gen: &M,
    z: &Mat,
    cond: Cond<'_>,
    schedule: &GeneratorSchedule,
) -> Result<Mat> {
    rollout_to(sched, gen, z, cond, 0, schedule)
}

/// Real-estimator velocity, guided with per-row scales when `w` is given.
pub fn real_velocity(real: &ScoreNet, x: &Mat, t: &[f64], cond: Cond<'_>, w: Option<&[f64]>) -> Result<Mat> {
    match (w, cond) {
        (Some(w), Cond::Labels(l)) => real.cfg_velocity(x, t, l, w),
        (Some(_), Cond::Null) => Err(Error::Config("guidance needs class labels".into())),
        (None, _) => real.predict(x, t, cond),
    }
}

/// `t′ = max(t − Δt, 0)` row-wise, with the number of clamped rows.
pub fn target_times(t: &[f64], delta_t: f64) -> (Vec<f64>, usize) {
    let mut clamped = 0;
    let tp = t
        .iter()
        .map(|&ti| {
            if ti <= delta_t {
                clamped += 1;
                0.0
            } else {
                ti - delta_t
            }
        })
        .collect();
    (tp, clamped)
}

/// One Euler step of each estimator from `(x_t, t)` to `t − Δt`.
#[allow(clippy::too_many_arguments)]
pub fn score_prediction_pair(
    sched: &NoiseSchedule,
    fake: &ScoreNet,
    real: &ScoreNet,
    x_t: &Mat,
    t: &[f64],
    delta_t: f64,
    cond: Cond<'_>,
    w: Option<&[f64]>,
) -> Result<(Mat, Mat)> {
    let (tp, clamped) = target_times(t, delta_t);
    if clamped > 0 {
        log::debug!("{clamped} rows with t ≤ Δt stepped to 0");
    }
    let vf = fake.predict(x_t, t, cond)?;
    let vr = real_velocity(real, x_t, t, cond, w)?;
    Ok((
        euler_ode_step_allow_equal(sched, x_t, &vf, t, &tp)?,
        euler_ode_step_allow_equal(sched, x_t, &vr, t, &tp)?,
    ))
}

/// Euler step that tolerates rows already at `t = 0` (clamped targets).
fn euler_ode_step_allow_equal(sched: &NoiseSchedule, x: &Mat, v: &Mat, t: &[f64], tp: &[f64]) -> Result<Mat> {
    if t.iter().zip(tp).all(|(a, b)| b < a) {
        return euler_ode_step(sched, x, v, t, tp);
    }
    let mut out = x.clone();
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let dt = tp[i] - t[i];
        if dt > 0.0 {
            return Err(Error::Rejected("Euler step must go back in time".into()));
        }
        row.zip_mut_with(&v.row(i), |a, &b| *a += dt * b);
    }
    Ok(out)
}

/// `(fake_end − real_end) / max(mean_j |x̂₀ − real_end|, 1e-8)` per row.
pub fn dmd_gradient(x0_hat: &Mat, fake_end: &Mat, real_end: &Mat) -> Result<Mat> {
    if x0_hat.dim() != fake_end.dim() || x0_hat.dim() != real_end.dim() {
        return Err(Error::Shape("DMD gradient inputs differ in shape".into()));
    }
    let mut out = fake_end - real_end;
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let mad = x0_hat
            .row(i)
            .iter()
            .zip(real_end.row(i))
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / x0_hat.ncols() as f64;
        let den = mad.max(DMD_DENOM_FLOOR);
        row.mapv_inplace(|z| z / den);
    }
    Ok(out)
}

/// Endpoint predictions of both estimators at `(x_t, t)` followed by
/// [`dmd_gradient`].
#[allow(clippy::too_many_arguments)]
pub fn dmd_gradient_from_models(
    sched: &NoiseSchedule,
    x0_hat: &Mat,
    x_t: &Mat,
    t: &[f64],
    fake: &ScoreNet,
    real: &ScoreNet,
    cond: Cond<'_>,
    w: Option<&[f64]>,
) -> Result<Mat> {
    let vf = fake.predict(x_t, t, cond)?;
    let vr = real_velocity(real, x_t, t, cond, w)?;
    let fe = endpoint_from_velocity(sched, x_t, &vf, t)?;
    let re = endpoint_from_velocity(sched, x_t, &vr, t)?;
    dmd_gradient(x0_hat, &fe, &re)
}

/// `mean_i ‖x̂₀ − sg(x̂₀ − grad)‖²`, which equals `mean_i ‖grad_i‖²`.
pub fn dmd_loss(x0_hat: &Mat, grad: &Mat) -> Result<f64> {
    if x0_hat.dim() != grad.dim() {
        return Err(Error::Shape("DMD loss inputs differ in shape".into()));
    }
    let target = x0_hat - grad;
    Ok((x0_hat - &target).mapv(|z| z * z).sum() / x0_hat.nrows() as f64)
}

/// Tape form of [`dmd_loss`] with the target held constant.
pub fn record_dmd_loss(tape: &mut Tape, x0_hat: Var, grad: &Mat) -> Result<Var> {
    let target = tape.value(x0_hat) - grad;
    let c = tape.constant(target);
    let d = tape.sub(x0_hat, c)?;
    let sq = tape.square(d);
    let per = tape.row_sum(sq);
    Ok(tape.mean(per))
}

/// `−mean D(x_fake, t′)`.
pub fn adm_generator_loss(logits: &Mat) -> f64 {
    -logits.mean().unwrap_or(0.0)
}

/// `mean relu(1 + D(x_fake)) + mean relu(1 − D(x_real))`.
pub fn adm_discriminator_loss(fake_logits: &Mat, real_logits: &Mat) -> f64 {
    crate::scorenets::hinge_loss(fake_logits, real_logits)
}
