use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ops::{
    dmd_gradient_from_models, generate, multi_step_rollout, real_velocity,
    record_dmd_loss, target_times, GeneratorSchedule,
};
use crate::diffcore::{forward_diffuse, Cond, NoiseSchedule};
use crate::evallab::MetricsLog;
use crate::nnad::{AdamW, OptState, StepOutcome, Tape};
use crate::rng::{normal_mat, stream, uniform_vec, StageRng};
use crate::scorenets::{
    flow_matching_grads, record_diffuse, record_endpoint, record_hinge, Critic, Discriminator,
    ScoreNet, Trainee,
};
use crate::{Error, Mat, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdmMode {
    /// Adversarial generator loss on one-step score predictions.
    Adm,
    /// Reverse-KL score distillation without a discriminator.
    #[serde(alias = "dmd")]
    DmdBaseline,
}

impl AdmMode {
    pub fn name(self) -> &'static str {
        match self {
            AdmMode::Adm => "adm",
            AdmMode::DmdBaseline => "dmd",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmConfig {
    pub delta_t: f64,
    pub ttur: u64,
    /// Generator updates to run.
    pub max_iter: u64,
    pub batch: usize,
    pub schedule: GeneratorSchedule,
    /// Guidance scale range for the real estimator, or `None` to disable.
    pub cfg_range: Option<[f64; 2]>,
    pub lr_gen: f64,
    pub lr_fake: f64,
    pub lr_disc: f64,
    pub head_width: usize,
    /// Draw uniform class labels for every batch instead of the null class.
    pub conditional: bool,
    pub probe_batch: usize,
    /// Probe after every `probe_every` generator updates.
    pub probe_every: u64,
    pub seed: u64,
}

impl Default for AdmConfig {
    fn default() -> Self {
        Self {
            delta_t: 1.0 / 64.0,
            ttur: 1,
            max_iter: 1000,
            batch: 128,
            schedule: GeneratorSchedule::four_step(1.0),
            cfg_range: None,
            lr_gen: 1e-4,
            lr_fake: 1e-4,
            lr_disc: 1e-4,
            head_width: crate::scorenets::HEAD_WIDTH,
            conditional: false,
            probe_batch: 256,
            probe_every: 1,
            seed: 0,
        }
    }
}

impl AdmConfig {
    pub fn validate(&self, horizon: f64) -> Result<()> {
        if !(self.delta_t > 0.0 && self.delta_t < horizon) {
            return Err(Error::Config(format!("Δt must lie in (0, {horizon})")));
        }
        if self.ttur == 0 {
            return Err(Error::Config("TTUR must be ≥ 1".into()));
        }
        if let Some([lo, hi]) = self.cfg_range {
            if !(lo >= 0.0 && lo <= hi) {
                return Err(Error::Config("guidance range must satisfy 0 ≤ w_lo ≤ w_hi".into()));
            }
        }
        if !(self.lr_gen > 0.0 && self.lr_fake > 0.0 && self.lr_disc > 0.0) {
            return Err(Error::Config("learning rates must be > 0".into()));
        }
        if self.batch == 0 || self.probe_batch == 0 || self.probe_every == 0 || self.head_width == 0 {
            return Err(Error::Config("batch sizes, probe cadence and head width must be ≥ 1".into()));
        }
        self.schedule.check_horizon(horizon)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateKind {
    Fake,
    Gen,
    Disc,
}

/// One instrumented update, recorded when tracing is on.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceEvent {
    pub kind: UpdateKind,
    pub global_iter: u64,
    pub gen_iter: u64,
    /// Generator parameter digest the update read.
    pub gen_digest: String,
    /// Digest of the `(x_fake, x_real)` pair for generator and
    /// discriminator updates.
    pub pair_digest: Option<String>,
}

/// Frozen probe inputs drawn once at the start of a run.
#[derive(Clone, Debug)]
struct Probe {
    z: Mat,
    z_g: Mat,
    t: Vec<f64>,
    labels: Option<Vec<usize>>,
    w: Option<Vec<f64>>,
}

/// Counters and the trailing probe window.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainerStats {
    pub gen_skipped: u64,
    pub fake_skipped: u64,
    pub disc_skipped: u64,
    /// Probe values that were non-finite or exceeded 100× the trailing
    /// median.
    pub probe_events: u64,
    pub clamped_rows: u64,
}

const PROBE_WINDOW: usize = 50;
const PROBE_BLOWUP: f64 = 100.0;

/// All roles, optimizers and counters of one ADM or DMD run.
pub struct AdmTrainer {
    pub cfg: AdmConfig,
    pub mode: AdmMode,
    pub sched: NoiseSchedule,
    pub real: ScoreNet,
    pub fake: Trainee,
    pub gen: Trainee,
    pub disc: Option<Discriminator>,
    pub disc_adam: AdamW,
    pub disc_opt: Vec<OptState>,
    pub gen_iter: u64,
    pub global_iter: u64,
    pub stats: TrainerStats,
    pub trace: Option<Vec<TraceEvent>>,
    num_classes: Option<usize>,
    probe: Probe,
    recent_probes: VecDeque<f64>,
    fake_rng: StageRng,
    gen_rng: StageRng,
}

fn mat_digest(parts: &[&Mat]) -> String {
    let mut h = Sha256::new();
    for m in parts {
        for v in m.iter() {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl AdmTrainer {
    pub fn new(cfg: AdmConfig, mode: AdmMode, teacher: &ScoreNet, init_gen: &ScoreNet) -> Result<Self> {
        let sched = NoiseSchedule::flow_linear();
        cfg.validate(sched.horizon())?;
        if init_gen.config != teacher.config {
            return Err(Error::Config("generator and teacher architectures differ".into()));
        }
        let num_classes = if cfg.conditional {
            Some(teacher.config.num_classes.ok_or_else(|| {
                Error::Config("conditional distillation needs a class-conditional teacher".into())
            })?)
        } else {
            None
        };
        if cfg.cfg_range.is_some() && num_classes.is_none() {
            return Err(Error::Config("guidance is only available for conditional runs".into()));
        }
        let mut init = stream(cfg.seed, "adm_init");
        let disc = match mode {
            AdmMode::Adm => Some(Discriminator::new(teacher, cfg.head_width, &mut init)),
            AdmMode::DmdBaseline => None,
        };
        let disc_opt = disc
            .as_ref()
            .map_or(Vec::new(), |d| d.trainable().into_iter().map(OptState::new).collect());
        let mut probe_rng = stream(cfg.seed, "adm_probe");
        let d = teacher.config.data_dim;
        let np = cfg.probe_batch;
        let probe = Probe {
            z: normal_mat(&mut probe_rng, np, d),
            z_g: normal_mat(&mut probe_rng, np, d),
            t: uniform_vec(&mut probe_rng, np, 0.0, sched.horizon()),
            labels: num_classes.map(|k| (0..np).map(|_| probe_rng.random_range(0..k)).collect()),
            w: cfg
                .cfg_range
                .map(|[lo, hi]| uniform_vec(&mut probe_rng, np, lo, hi)),
        };
        Ok(Self {
            fake: Trainee::new(teacher.clone(), cfg.lr_fake),
            gen: Trainee::new(init_gen.clone(), cfg.lr_gen),
            disc_adam: AdamW::new(cfg.lr_disc),
            real: teacher.clone(),
            disc,
            disc_opt,
            gen_iter: 0,
            global_iter: 0,
            stats: TrainerStats::default(),
            trace: None,
            num_classes,
            probe,
            recent_probes: VecDeque::new(),
            fake_rng: stream(cfg.seed, "adm_fake"),
            gen_rng: stream(cfg.seed, "adm_gen"),
            sched,
            mode,
            cfg,
        })
    }

    pub fn enable_trace(&mut self) {
        self.trace = Some(Vec::new());
    }

    fn note(&mut self, kind: UpdateKind, pair: Option<&[&Mat]>) {
        if self.trace.is_some() {
            let ev = TraceEvent {
                kind,
                global_iter: self.global_iter,
                gen_iter: self.gen_iter,
                gen_digest: self.gen.net.params.digest(),
                pair_digest: pair.map(mat_digest),
            };
            self.trace.as_mut().unwrap().push(ev);
        }
    }

    fn draw_labels(rng: &mut StageRng, n: usize, k: Option<usize>) -> Option<Vec<usize>> {
        k.map(|k| (0..n).map(|_| rng.random_range(0..k)).collect())
    }

    fn draw_w(&self, rng: &mut StageRng, n: usize) -> Option<Vec<f64>> {
        self.cfg.cfg_range.map(|[lo, hi]| uniform_vec(rng, n, lo, hi))
    }

    /// Flow-matching update of the fake estimator on fresh generator
    /// samples. Returns the pre-step loss.
    pub fn fake_update(&mut self) -> Result<f64> {
        let n = self.cfg.batch;
        let d = self.real.config.data_dim;
        let mut rng = self.fake_rng.clone();
        let z = normal_mat(&mut rng, n, d);
        let labels = Self::draw_labels(&mut rng, n, self.num_classes);
        let t = uniform_vec(&mut rng, n, 0.0, self.sched.horizon());
        let eps = normal_mat(&mut rng, n, d);
        self.fake_rng = rng;
        let cond = Cond::from_labels(labels.as_deref());
        self.note(UpdateKind::Fake, None);
        let x0 = generate(&self.sched, &self.gen.net, &z, cond, &self.cfg.schedule)?;
        let (loss, grads) = flow_matching_grads(&self.fake.net, &self.sched, &x0, &eps, &t, cond)?;
        if !loss.is_finite() || self.fake.apply(&grads)? == StepOutcome::Skipped {
            self.stats.fake_skipped += 1;
        }
        Ok(loss)
    }

    /// Generator update followed by the discriminator update on the same
    /// score-prediction pair. Returns `(gen_loss, disc_loss, grad_norm)`.
    pub fn generator_update(&mut self) -> Result<(f64, Option<f64>, f64)> {
        let n_rows = self.cfg.batch;
        let d = self.real.config.data_dim;
        let mut rng = self.gen_rng.clone();
        let z = normal_mat(&mut rng, n_rows, d);
        let labels = Self::draw_labels(&mut rng, n_rows, self.num_classes);
        let steps = self.cfg.schedule.steps();
        let n = rng.random_range(1..=steps);
        let t = uniform_vec(&mut rng, n_rows, 0.0, self.sched.horizon());
        let z_g = normal_mat(&mut rng, n_rows, d);
        let w = self.draw_w(&mut rng, n_rows);
        self.gen_rng = rng;
        let cond = Cond::from_labels(labels.as_deref());

        let x_tn = multi_step_rollout(&self.sched, &self.gen.net, &z, cond, n, &self.cfg.schedule)?;
        let t_n = self.cfg.schedule.time(n);
        let mut tape = Tape::new();
        let (x0_hat, rec) = record_endpoint(&mut tape, &self.gen.net, x_tn, &[t_n], cond, true)?;
        let x_t = record_diffuse(&mut tape, &self.sched, x0_hat, &z_g, &t)?;

        let (loss, pair) = match self.mode {
            AdmMode::Adm => {
                let (tp, clamped) = target_times(&t, self.cfg.delta_t);
                self.stats.clamped_rows += clamped as u64;
                let dt: Vec<f64> = t.iter().zip(&tp).map(|(a, b)| b - a).collect();
                let fake = self.fake.net.record(&mut tape, x_t, &t, cond, false)?;
                let step = tape.scale_rows(fake.output, &dt)?;
                let x_fake = tape.add(x_t, step)?;
                let xt_val = tape.value(x_t).clone();
                let vr = real_velocity(&self.real, &xt_val, &t, cond, w.as_deref())?;
                let mut x_real = xt_val;
                for (i, mut row) in x_real.rows_mut().into_iter().enumerate() {
                    row.zip_mut_with(&vr.row(i), |a, &b| *a += dt[i] * b);
                }
                let disc = self.disc.as_ref().expect("adm mode has a discriminator");
                let logits = disc.record(&mut tape, x_fake, &tp, cond, false)?;
                let m = tape.mean(logits.logits);
                let loss = tape.scale(m, -1.0);
                (loss, Some((tape.value(x_fake).clone(), x_real, tp)))
            }
            AdmMode::DmdBaseline => {
                let xt_val = tape.value(x_t).clone();
                let x0_val = tape.value(x0_hat).clone();
                let grad = dmd_gradient_from_models(
                    &self.sched,
                    &x0_val,
                    &xt_val,
                    &t,
                    &self.fake.net,
                    &self.real,
                    cond,
                    w.as_deref(),
                )?;
                (record_dmd_loss(&mut tape, x0_hat, &grad)?, None)
            }
        };
        let g = tape.backward(loss)?;
        let grads = rec.binding.grads(&self.gen.net.params, &g);
        let value = tape.scalar(loss);
        let digests: Option<Vec<&Mat>> = pair.as_ref().map(|(f, r, _)| vec![f, r]);
        self.note(UpdateKind::Gen, digests.as_deref());
        if !value.is_finite() {
            self.gen.opt.skipped += 1;
            self.stats.gen_skipped += 1;
            log::warn!("non-finite generator loss at global iteration {}", self.global_iter);
        } else if self.gen.apply(&grads)? == StepOutcome::Skipped {
            self.stats.gen_skipped += 1;
        }
        self.gen_iter += 1;

        let disc_loss = match pair {
            Some((x_fake, x_real, tp)) => Some(self.discriminator_update(&x_fake, &x_real, &tp, cond)?),
            None => None,
        };
        Ok((value, disc_loss, grads.norm()))
    }

    fn discriminator_update(&mut self, x_fake: &Mat, x_real: &Mat, tp: &[f64], cond: Cond<'_>) -> Result<f64> {
        self.note(UpdateKind::Disc, Some(&[x_fake, x_real]));
        let disc = self.disc.as_mut().expect("adm mode has a discriminator");
        let mut tape = Tape::new();
        let f = tape.constant(x_fake.clone());
        let r = tape.constant(x_real.clone());
        let rf = disc.record(&mut tape, f, tp, cond, true)?;
        let rr = disc.record(&mut tape, r, tp, cond, true)?;
        let loss = record_hinge(&mut tape, rf.logits, rr.logits);
        let g = tape.backward(loss)?;
        let grads = disc.grads(&[&rf, &rr], &g);
        let value = tape.scalar(loss);
        let outcome = if value.is_finite() {
            self.disc_adam.step_all(disc.trainable_mut(), &grads, &mut self.disc_opt)?
        } else {
            StepOutcome::Skipped
        };
        if outcome == StepOutcome::Skipped {
            self.stats.disc_skipped += 1;
        }
        Ok(value)
    }

    /// Reverse-KL surrogate on the frozen probe inputs; never optimized.
    pub fn probe(&self) -> Result<f64> {
        let p = &self.probe;
        let cond = Cond::from_labels(p.labels.as_deref());
        let x0 = generate(&self.sched, &self.gen.net, &p.z, cond, &self.cfg.schedule)?;
        let x_t = forward_diffuse(&self.sched, &x0, &p.z_g, &p.t)?;
        let grad = dmd_gradient_from_models(
            &self.sched,
            &x0,
            &x_t,
            &p.t,
            &self.fake.net,
            &self.real,
            cond,
            p.w.as_deref(),
        )?;
        Ok(grad.mapv(|z| z * z).sum() / grad.nrows() as f64)
    }

    fn note_probe(&mut self, v: f64) {
        let blowup = if !v.is_finite() {
            true
        } else if self.recent_probes.len() >= 5 {
            let mut s: Vec<f64> = self.recent_probes.iter().copied().collect();
            s.sort_by(f64::total_cmp);
            v > PROBE_BLOWUP * s[s.len() / 2]
        } else {
            false
        };
        if blowup {
            self.stats.probe_events += 1;
        }
        if v.is_finite() {
            self.recent_probes.push_back(v);
            if self.recent_probes.len() > PROBE_WINDOW {
                self.recent_probes.pop_front();
            }
        }
    }

    /// One pass of the main loop: a fake update, then, when the TTUR gate
    /// opens, a generator and a discriminator update.
    pub fn step(&mut self, log: &mut MetricsLog) -> Result<()> {
        self.global_iter += 1;
        let it = self.global_iter;
        let fake_loss = self.fake_update()?;
        log.record(it, "fake_loss", fake_loss)?;
        if self.global_iter % self.cfg.ttur != 0 {
            return Ok(());
        }
        let (gen_loss, disc_loss, norm) = self.generator_update()?;
        log.record(it, "gen_loss", gen_loss)?;
        if let Some(dl) = disc_loss {
            log.record(it, "disc_loss", dl)?;
        }
        log.record(it, "gen_grad_norm", norm)?;
        if self.gen_iter % self.cfg.probe_every == 0 {
            let p = self.probe()?;
            self.note_probe(p);
            log.record(it, "dmd_loss_probe", p)?;
        }
        log.record(it, "gen_skipped", self.stats.gen_skipped as f64)?;
        log.record(it, "probe_events", self.stats.probe_events as f64)?;
        Ok(())
    }

    pub fn run(&mut self, log: &mut MetricsLog) -> Result<()> {
        self.run_with(log, |_, _| Ok(()))
    }

    /// [`run`](Self::run) calling `hook` after every generator update.
    pub fn run_with<F>(&mut self, log: &mut MetricsLog, mut hook: F) -> Result<()>
    where
        F: FnMut(&AdmTrainer, &mut MetricsLog) -> Result<()>,
    {
        if self.gen_iter == 0 {
            let p = self.probe()?;
            self.note_probe(p);
            log.record(0, "dmd_loss_probe", p)?;
        }
        while self.gen_iter < self.cfg.max_iter {
            let before = self.gen_iter;
            self.step(log)?;
            if self.gen_iter != before {
                hook(self, log)?;
            }
        }
        Ok(())
    }

    /// Samples of the current generator.
    pub fn sample(&self, z: &Mat, cond: Cond<'_>) -> Result<Mat> {
        generate(&self.sched, &self.gen.net, z, cond, &self.cfg.schedule)
    }
}

/// Trains from `init_gen` until `max_iter` generator updates.
pub fn adm_train(
    cfg: AdmConfig,
    mode: AdmMode,
    teacher: &ScoreNet,
    init_gen: &ScoreNet,
    log: &mut MetricsLog,
) -> Result<AdmTrainer> {
    let mut tr = AdmTrainer::new(cfg, mode, teacher, init_gen)?;
    tr.run(log)?;
    Ok(tr)
}
