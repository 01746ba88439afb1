use rand::Rng;
use serde::{Deserialize, Serialize};

use super::pairs::{interpolate_batch, OdePairDataset, PairBatch};
use crate::diffcore::{endpoint_from_velocity, forward_diffuse, NoiseSchedule};
use crate::evallab::MetricsLog;
use crate::nnad::{AdamW, OptState, ParamGrads, StepOutcome, Tape};
use crate::rng::{normal_mat, stream, StageRng};
use crate::scorenets::{
    record_diffuse, record_endpoint, record_hinge, Critic, DataSpaceDiscriminator, Discriminator,
    Parameterization, ScoreNet, Trainee,
};
use crate::{Error, Result};

/// `t = T (1 − (u/T)³)`.
pub fn cubic_map(u: f64, horizon: f64) -> f64 {
    horizon * (1.0 - (u / horizon).powi(3))
}

/// Analytic CDF of [`sample_cubic_t`]: `F(t) = 1 − (1 − t/T)^{1/3}`.
pub fn cubic_cdf(t: f64, horizon: f64) -> f64 {
    let s = (t / horizon).clamp(0.0, 1.0);
    1.0 - (1.0 - s).cbrt()
}

/// Generator time from `u ~ U[0, T)` pushed through [`cubic_map`].
pub fn sample_cubic_t<R: Rng + ?Sized>(rng: &mut R, horizon: f64) -> f64 {
    cubic_map(horizon * rng.random::<f64>(), horizon)
}

/// Discriminator time, uniform on `(0, T]`.
pub fn sample_uniform_disc_t<R: Rng + ?Sized>(rng: &mut R, horizon: f64) -> f64 {
    horizon * (1.0 - rng.random::<f64>())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdpConfig {
    pub lambda_lat: f64,
    pub lambda_data: f64,
    pub iterations: u64,
    pub batch: usize,
    pub lr_gen: f64,
    pub lr_disc: f64,
    /// Euler steps of the teacher solves that produced the pairs.
    pub teacher_steps: usize,
    pub head_width: usize,
    pub data_disc_hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for AdpConfig {
    fn default() -> Self {
        Self {
            lambda_lat: 0.85,
            lambda_data: 0.15,
            iterations: 2000,
            batch: 128,
            lr_gen: 1e-4,
            lr_disc: 1e-4,
            teacher_steps: 64,
            head_width: crate::scorenets::HEAD_WIDTH,
            data_disc_hidden: vec![64, 64],
            seed: 0,
        }
    }
}

impl AdpConfig {
    pub fn validate(&self) -> Result<()> {
        if (self.lambda_lat + self.lambda_data - 1.0).abs() > 1e-12
            || self.lambda_lat < 0.0
            || self.lambda_data < 0.0
        {
            return Err(Error::Config("λ weights must be non-negative and sum to 1".into()));
        }
        if !(self.lr_gen > 0.0 && self.lr_disc > 0.0) {
            return Err(Error::Config("learning rates must be > 0".into()));
        }
        if self.batch == 0 || self.head_width == 0 || self.teacher_steps == 0 {
            return Err(Error::Config("batch, head width and teacher steps must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub loss: f64,
    pub outcome: StepOutcome,
    pub grad_norm: f64,
}

/// Generator, hybrid discriminators and their optimizers.
#[derive(Clone, Debug)]
pub struct AdpTrainer {
    pub cfg: AdpConfig,
    pub sched: NoiseSchedule,
    pub gen: Trainee,
    pub disc_lat: Discriminator,
    pub disc_data: DataSpaceDiscriminator,
    pub disc_adam: AdamW,
    /// Latent heads first, then the data trunk and heads.
    pub disc_opt: Vec<OptState>,
    pub iter: u64,
    batch_rng: StageRng,
    time_rng: StageRng,
    noise_rng: StageRng,
}

impl AdpTrainer {
    pub fn new(cfg: AdpConfig, teacher: &ScoreNet) -> Result<Self> {
        cfg.validate()?;
        let sched = NoiseSchedule::flow_linear();
        let mut init = stream(cfg.seed, "adp_init");
        let disc_lat = Discriminator::new(teacher, cfg.head_width, &mut init);
        let disc_data = DataSpaceDiscriminator::new(
            teacher.config.data_dim,
            &cfg.data_disc_hidden,
            cfg.head_width,
            &mut init,
        )?;
        let disc_opt = disc_lat
            .trainable()
            .into_iter()
            .chain(disc_data.trainable())
            .map(OptState::new)
            .collect();
        Ok(Self {
            gen: Trainee::new(teacher.clone(), cfg.lr_gen),
            disc_adam: AdamW::new(cfg.lr_disc),
            sched,
            disc_lat,
            disc_data,
            disc_opt,
            iter: 0,
            batch_rng: stream(cfg.seed, "adp_batch"),
            time_rng: stream(cfg.seed, "adp_time"),
            noise_rng: stream(cfg.seed, "adp_noise"),
            cfg,
        })
    }

    fn times(&mut self, n: usize) -> (Vec<f64>, Vec<f64>) {
        let h = self.sched.horizon();
        let t = (0..n).map(|_| sample_cubic_t(&mut self.time_rng, h)).collect();
        let tp = (0..n).map(|_| sample_uniform_disc_t(&mut self.time_rng, h)).collect();
        (t, tp)
    }

    /// One generator update against `−λ₁ D_lat(x̃_{t′}, t′) − λ₂ D_data(x̃₀)`.
    pub fn generator_step(&mut self, batch: &PairBatch) -> Result<StepReport> {
        let n = batch.len();
        let (t, tp) = self.times(n);
        let eps = normal_mat(&mut self.noise_rng, n, batch.data.ncols());
        let x_t = interpolate_batch(batch, &t, self.sched.horizon())?;
        let mut tape = Tape::new();
        let (x0, rec) = record_endpoint(&mut tape, &self.gen.net, x_t, &t, batch.cond(), true)?;
        let x_tp = record_diffuse(&mut tape, &self.sched, x0, &eps, &tp)?;
        let lat = self.disc_lat.record(&mut tape, x_tp, &tp, batch.cond(), false)?;
        let data = self.disc_data.record(&mut tape, x0, &[0.0], batch.cond(), false)?;
        let a = tape.mean(lat.logits);
        let b = tape.mean(data.logits);
        let a = tape.scale(a, -self.cfg.lambda_lat);
        let b = tape.scale(b, -self.cfg.lambda_data);
        let loss = tape.add(a, b)?;
        let g = tape.backward(loss)?;
        let grads = rec.binding.grads(&self.gen.net.params, &g);
        let value = tape.scalar(loss);
        let outcome = if value.is_finite() {
            self.gen.apply(&grads)?
        } else {
            self.gen.opt.skipped += 1;
            log::warn!("non-finite ADP generator loss, step skipped");
            StepOutcome::Skipped
        };
        Ok(StepReport {
            loss: value,
            outcome,
            grad_norm: grads.norm(),
        })
    }

    /// One joint update of both discriminators with the generator output
    /// detached.
    pub fn discriminator_step(&mut self, batch: &PairBatch) -> Result<StepReport> {
        let n = batch.len();
        let d = batch.data.ncols();
        let (t, tp) = self.times(n);
        let x_t = interpolate_batch(batch, &t, self.sched.horizon())?;
        let v = self.gen.net.predict(&x_t, &t, batch.cond())?;
        let fake0 = endpoint_from_velocity(&self.sched, &x_t, &v, &t)?;
        let eps_f = normal_mat(&mut self.noise_rng, n, d);
        let eps_r = normal_mat(&mut self.noise_rng, n, d);
        let fake_tp = forward_diffuse(&self.sched, &fake0, &eps_f, &tp)?;
        let real_tp = forward_diffuse(&self.sched, &batch.data, &eps_r, &tp)?;

        let mut tape = Tape::new();
        let vars = [fake_tp, real_tp, fake0, batch.data.clone()].map(|m| tape.constant(m));
        let lf = self.disc_lat.record(&mut tape, vars[0], &tp, batch.cond(), true)?;
        let lr = self.disc_lat.record(&mut tape, vars[1], &tp, batch.cond(), true)?;
        let df = self.disc_data.record(&mut tape, vars[2], &[0.0], batch.cond(), true)?;
        let dr = self.disc_data.record(&mut tape, vars[3], &[0.0], batch.cond(), true)?;
        let hl = record_hinge(&mut tape, lf.logits, lr.logits);
        let hd = record_hinge(&mut tape, df.logits, dr.logits);
        let hl = tape.scale(hl, self.cfg.lambda_lat);
        let hd = tape.scale(hd, self.cfg.lambda_data);
        let loss = tape.add(hl, hd)?;
        let g = tape.backward(loss)?;
        let mut grads: Vec<ParamGrads> = self.disc_lat.grads(&[&lf, &lr], &g);
        grads.extend(self.disc_data.grads(&[&df, &dr], &g));
        let value = tape.scalar(loss);
        let norm = grads.iter().map(|g| g.norm().powi(2)).sum::<f64>().sqrt();
        let outcome = if value.is_finite() {
            let stores: Vec<_> = self
                .disc_lat
                .heads
                .iter_mut()
                .chain(std::iter::once(&mut self.disc_data.trunk))
                .chain(self.disc_data.heads.iter_mut())
                .collect();
            self.disc_adam.step_all(stores, &grads, &mut self.disc_opt)?
        } else {
            self.disc_opt.iter_mut().for_each(|s| s.skipped += 1);
            log::warn!("non-finite ADP discriminator loss, step skipped");
            StepOutcome::Skipped
        };
        Ok(StepReport {
            loss: value,
            outcome,
            grad_norm: norm,
        })
    }

    pub fn sample_batch(&mut self, pairs: &OdePairDataset) -> PairBatch {
        let idx: Vec<usize> = (0..self.cfg.batch)
            .map(|_| self.batch_rng.random_range(0..pairs.len()))
            .collect();
        pairs.batch(&idx)
    }

    /// One generator step followed by one discriminator step on the same
    /// minibatch.
    pub fn iterate(&mut self, pairs: &OdePairDataset, log: &mut MetricsLog) -> Result<()> {
        let batch = self.sample_batch(pairs);
        let g = self.generator_step(&batch)?;
        let d = self.discriminator_step(&batch)?;
        self.iter += 1;
        log.record(self.iter, "adp_gen_loss", g.loss)?;
        log.record(self.iter, "adp_disc_loss", d.loss)?;
        log.record(self.iter, "adp_gen_grad_norm", g.grad_norm)?;
        log.record(self.iter, "adp_disc_grad_norm", d.grad_norm)?;
        log.record(self.iter, "adp_gen_skipped", self.gen.opt.skipped as f64)?;
        Ok(())
    }
}

/// Runs the configured budget and returns the trained state.
pub fn adp_train(
    cfg: AdpConfig,
    teacher: &ScoreNet,
    pairs: &OdePairDataset,
    log: &mut MetricsLog,
) -> Result<AdpTrainer> {
    if teacher.parameterization != Parameterization::Velocity {
        return Err(Error::Config("ADP expects a velocity teacher".into()));
    }
    if pairs.is_empty() {
        return Err(Error::Rejected("no ODE pairs".into()));
    }
    if pairs.dim() != teacher.config.data_dim {
        return Err(Error::Shape("pair dimension differs from the teacher".into()));
    }
    let mut tr = AdpTrainer::new(cfg, teacher)?;
    for _ in 0..tr.cfg.iterations {
        tr.iterate(pairs, log)?;
    }
    Ok(tr)
}
