use rand::Rng;

use super::net::ScoreNet;
use crate::diffcore::{
    flow_velocity_target, forward_diffuse, row_times, Cond, NoiseSchedule, SampleBatch, ScheduleKind,
    NULL_CLASS,
};
use crate::nnad::{AdamW, OptState, ParamGrads, Recorded, StepOutcome, Tape, Var};
use crate::rng::{normal_mat, uniform_vec};
use crate::{Error, Mat, Result};

/// A network together with its optimizer.
#[derive(Clone, Debug)]
pub struct Trainee {
    pub net: ScoreNet,
    pub adam: AdamW,
    pub opt: OptState,
}

impl Trainee {
    pub fn new(net: ScoreNet, lr: f64) -> Self {
        let opt = OptState::new(&net.params);
        Self {
            net,
            adam: AdamW::new(lr),
            opt,
        }
    }

    pub fn apply(&mut self, grads: &ParamGrads) -> Result<StepOutcome> {
        self.adam.step(&mut self.net.params, grads, &mut self.opt)
    }
}

/// Flow-matching loss `mean_i ‖v(x_t, t) − (ε − x₀)‖²` and its parameter
/// gradient.
pub fn flow_matching_grads(
    net: &ScoreNet,
    sched: &NoiseSchedule,
    x0: &Mat,
    eps: &Mat,
    t: &[f64],
    cond: Cond<'_>,
) -> Result<(f64, ParamGrads)> {
    sched.require(ScheduleKind::FlowLinear, "flow matching")?;
    let xt = forward_diffuse(sched, x0, eps, t)?;
    let target = flow_velocity_target(sched, x0, eps)?;
    let mut tape = Tape::new();
    let x = tape.constant(xt);
    let rec = net.record(&mut tape, x, t, cond, true)?;
    let tgt = tape.constant(target);
    let diff = tape.sub(rec.output, tgt)?;
    let sq = tape.square(diff);
    let per = tape.row_sum(sq);
    let loss = tape.mean(per);
    let g = tape.backward(loss)?;
    Ok((tape.scalar(loss), rec.binding.grads(&net.params, &g)))
}

/// Same loss without gradients.
pub fn flow_matching_loss(
    net: &ScoreNet,
    sched: &NoiseSchedule,
    x0: &Mat,
    eps: &Mat,
    t: &[f64],
    cond: Cond<'_>,
) -> Result<f64> {
    let xt = forward_diffuse(sched, x0, eps, t)?;
    let target = flow_velocity_target(sched, x0, eps)?;
    let v = net.predict(&xt, t, cond)?;
    Ok((&v - &target).mapv(|z| z * z).sum() / x0.nrows() as f64)
}

/// Replaces each label by the null class with probability `p`.
pub fn drop_labels<R: Rng + ?Sized>(labels: &[usize], p: f64, rng: &mut R) -> Vec<usize> {
    labels
        .iter()
        .map(|&l| if rng.random::<f64>() < p { NULL_CLASS } else { l })
        .collect()
}

/// One AdamW step of teacher pre-training with `t ~ U(0, T)`. Conditional
/// teachers see the null class with probability `cond_drop`. Returns the
/// pre-step loss.
pub fn teacher_train_step<R: Rng + ?Sized>(
    teacher: &mut Trainee,
    sched: &NoiseSchedule,
    batch: &SampleBatch,
    cond_drop: f64,
    rng: &mut R,
) -> Result<f64> {
    batch.validate()?;
    if !(0.0..=1.0).contains(&cond_drop) {
        return Err(Error::Config(format!("condition drop rate {cond_drop} outside [0, 1]")));
    }
    let n = batch.len();
    let t = uniform_vec(rng, n, 0.0, sched.horizon());
    let eps = normal_mat(rng, n, batch.dim());
    let labels = match (&batch.labels, teacher.net.is_conditional()) {
        (Some(l), true) => Some(drop_labels(l, cond_drop, rng)),
        _ => None,
    };
    let cond = Cond::from_labels(labels.as_deref());
    let (loss, grads) = flow_matching_grads(&teacher.net, sched, &batch.points, &eps, &t, cond)?;
    teacher.apply(&grads)?;
    Ok(loss)
}

/// Records `x̂₀ = x_t − t·v(x_t, t)` for a velocity network on `tape`, with
/// `x_t` a constant input.
pub fn record_endpoint(
    tape: &mut Tape,
    net: &ScoreNet,
    x_t: Mat,
    t: &[f64],
    cond: Cond<'_>,
    trainable: bool,
) -> Result<(Var, Recorded)> {
    let rows = x_t.nrows();
    let ts = row_times(t, rows)?;
    let x = tape.constant(x_t);
    let rec = net.record(tape, x, &ts, cond, trainable)?;
    let tv = tape.scale_rows(rec.output, &ts)?;
    Ok((tape.sub(x, tv)?, rec))
}

/// Records `α_t x₀ + σ_t ε` with `ε` constant.
pub fn record_diffuse(
    tape: &mut Tape,
    sched: &NoiseSchedule,
    x0: Var,
    eps: &Mat,
    t: &[f64],
) -> Result<Var> {
    let rows = tape.value(x0).nrows();
    let ts = row_times(t, rows)?;
    let mut alpha = Vec::with_capacity(rows);
    let mut noise = eps.clone();
    for (i, &ti) in ts.iter().enumerate() {
        let (a, s) = sched.alpha_sigma(ti)?;
        alpha.push(a);
        noise.row_mut(i).mapv_inplace(|z| s * z);
    }
    let scaled = tape.scale_rows(x0, &alpha)?;
    let n = tape.constant(noise);
    tape.add(scaled, n)
}

/// Hinge terms `mean relu(1 + D(fake)) + mean relu(1 − D(real))` on tape.
pub fn record_hinge(tape: &mut Tape, fake_logits: Var, real_logits: Var) -> Var {
    let f = tape.add_scalar(fake_logits, 1.0);
    let f = tape.relu(f);
    let f = tape.mean(f);
    let r = tape.scale(real_logits, -1.0);
    let r = tape.add_scalar(r, 1.0);
    let r = tape.relu(r);
    let r = tape.mean(r);
    tape.add(f, r).expect("scalars")
}

/// Pure form of [`record_hinge`].
pub fn hinge_loss(fake_logits: &Mat, real_logits: &Mat) -> f64 {
    fake_logits.mapv(|d| (1.0 + d).max(0.0)).mean().unwrap_or(0.0)
        + real_logits.mapv(|d| (1.0 - d).max(0.0)).mean().unwrap_or(0.0)
}
