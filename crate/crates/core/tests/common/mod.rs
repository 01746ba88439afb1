//! Finite-difference checks of parameter gradients for every network role.

#![allow(dead_code)]

use dmdx::diffcore::{endpoint_from_velocity, forward_diffuse, Cond, NoiseSchedule, NULL_CLASS};
use dmdx::nnad::{ParamGrads, ParamStore, Tape};
use dmdx::rng::{normal_mat, stream, uniform_vec, StageRng};
use dmdx::scorenets::{
    flow_matching_grads, flow_matching_loss, hinge_loss, record_diffuse, record_endpoint, record_hinge, Critic,
    DataSpaceDiscriminator, Discriminator, NetConfig, Parameterization, ScoreNet,
};
use dmdx::adm::AdmMode;
use dmdx::harness::RunConfig;
use dmdx::Mat;
use rand::Rng;

pub const FD_STEP: f64 = 1e-3;
/// Gradients below this magnitude are compared absolutely.
pub const REL_FLOOR: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    /// Teacher and fake estimator under the flow-matching loss.
    ScoreEstimator,
    /// Generator under the adversarial loss on one-step score predictions.
    GeneratorAdm,
    /// Generator under the DMD surrogate with a constant target.
    GeneratorDmd,
    /// Generator under the hybrid pre-training loss.
    GeneratorAdp,
    /// Heads of the latent discriminator.
    DiscLatent,
    /// Trunk and heads of the data-space discriminator.
    DiscData,
}

pub const ROLES: [Role; 6] = [
    Role::ScoreEstimator,
    Role::GeneratorAdm,
    Role::GeneratorDmd,
    Role::GeneratorAdp,
    Role::DiscLatent,
    Role::DiscData,
];

pub struct Case {
    pub cfg: NetConfig,
    pub rows: usize,
    pub rng: StageRng,
}

impl Case {
    pub fn random(seed: u64) -> Self {
        let mut rng = stream(seed, "grad_case");
        let layers = rng.random_range(1..=3);
        let cfg = NetConfig {
            data_dim: rng.random_range(1..=3),
            hidden: (0..layers).map(|_| rng.random_range(2..=6)).collect(),
            temb_dim: 2 * rng.random_range(1..=3),
            num_classes: if rng.random_bool(0.5) { Some(rng.random_range(2..=4)) } else { None },
        };
        let rows = rng.random_range(2..=5);
        Self { cfg, rows, rng }
    }

    pub fn net(&mut self) -> ScoreNet {
        ScoreNet::new(self.cfg.clone(), Parameterization::Velocity, 1.0, &mut self.rng).unwrap()
    }

    pub fn labels(&mut self) -> Option<Vec<usize>> {
        let rows = self.rows;
        self.cfg
            .num_classes
            .map(|k| (0..rows).map(|_| self.rng.random_range(0..=k)).map(|l| if l == k { NULL_CLASS } else { l }).collect())
    }

    pub fn mat(&mut self) -> Mat {
        normal_mat(&mut self.rng, self.rows, self.cfg.data_dim)
    }

    pub fn times(&mut self, lo: f64, hi: f64) -> Vec<f64> {
        uniform_vec(&mut self.rng, self.rows, lo, hi)
    }
}

/// Largest `|a − n| / max(|a|, |n|, REL_FLOOR)` over every coordinate of
/// `stores`, with `n` the fourth-order central difference of `f`.
pub fn compare(stores: &[ParamStore], analytic: &[ParamGrads], f: impl Fn(&[ParamStore]) -> f64) -> f64 {
    assert_eq!(stores.len(), analytic.len());
    let mut worst = 0.0f64;
    let mut work = stores.to_vec();
    for s in 0..stores.len() {
        for l in 0..stores[s].layers.len() {
            let (rows, cols) = stores[s].layers[l].weight.dim();
            let mut coords: Vec<(bool, usize, usize)> = Vec::new();
            for i in 0..rows {
                for j in 0..cols {
                    coords.push((true, i, j));
                }
                coords.push((false, i, 0));
            }
            for (is_w, i, j) in coords {
                let base = if is_w { stores[s].layers[l].weight[[i, j]] } else { stores[s].layers[l].bias[i] };
                let mut eval = |v: f64| {
                    if is_w {
                        work[s].layers[l].weight[[i, j]] = v;
                    } else {
                        work[s].layers[l].bias[i] = v;
                    }
                    f(&work)
                };
                let h = FD_STEP;
                let num = (8.0 * (eval(base + h) - eval(base - h)) - (eval(base + 2.0 * h) - eval(base - 2.0 * h)))
                    / (12.0 * h);
                eval(base);
                let a = if is_w { analytic[s].layers[l].0[[i, j]] } else { analytic[s].layers[l].1[i] };
                let err = (a - num).abs() / a.abs().max(num.abs()).max(REL_FLOOR);
                worst = worst.max(err);
            }
        }
    }
    worst
}

fn with_params(net: &ScoreNet, p: &ParamStore) -> ScoreNet {
    ScoreNet {
        params: p.clone(),
        ..net.clone()
    }
}

/// Worst relative error of one random configuration of `role`.
pub fn check(role: Role, seed: u64) -> f64 {
    let sched = NoiseSchedule::flow_linear();
    let mut c = Case::random(seed ^ (role as u64) << 32);
    let labels = c.labels();
    let cond = Cond::from_labels(labels.as_deref());
    match role {
        Role::ScoreEstimator => {
            let net = c.net();
            let (x0, eps, t) = (c.mat(), c.mat(), c.times(0.0, 1.0));
            let (_, g) = flow_matching_grads(&net, &sched, &x0, &eps, &t, cond).unwrap();
            compare(&[net.params.clone()], &[g], |p| {
                flow_matching_loss(&with_params(&net, &p[0]), &sched, &x0, &eps, &t, cond).unwrap()
            })
        }
        Role::GeneratorAdm => {
            let (gen, fake, teacher) = (c.net(), c.net(), c.net());
            let disc = Discriminator::new(&teacher, 4, &mut c.rng);
            let (z, zg) = (c.mat(), c.mat());
            let t = c.times(0.05, 1.0);
            let dt = 1.0 / 64.0;
            let tp: Vec<f64> = t.iter().map(|x| x - dt).collect();
            let mut tape = Tape::new();
            let (x0, rec) = record_endpoint(&mut tape, &gen, z.clone(), &[1.0], cond, true).unwrap();
            let xt = record_diffuse(&mut tape, &sched, x0, &zg, &t).unwrap();
            let fr = fake.record(&mut tape, xt, &t, cond, false).unwrap();
            let neg: Vec<f64> = vec![-dt; c.rows];
            let step = tape.scale_rows(fr.output, &neg).unwrap();
            let xf = tape.add(xt, step).unwrap();
            let lg = disc.record(&mut tape, xf, &tp, cond, false).unwrap();
            let m = tape.mean(lg.logits);
            let loss = tape.scale(m, -1.0);
            let g = rec.binding.grads(&gen.params, &tape.backward(loss).unwrap());
            compare(&[gen.params.clone()], &[g], |p| {
                let gn = with_params(&gen, &p[0]);
                let v = gn.predict(&z, &[1.0], cond).unwrap();
                let x0 = endpoint_from_velocity(&sched, &z, &v, &[1.0]).unwrap();
                let xt = forward_diffuse(&sched, &x0, &zg, &t).unwrap();
                let vf = fake.predict(&xt, &t, cond).unwrap();
                let xf = &xt - &(vf * dt);
                -disc.logits(&xf, &tp, cond).unwrap().mean().unwrap()
            })
        }
        Role::GeneratorDmd => {
            let gen = c.net();
            let z = c.mat();
            let grad = c.mat();
            let mut tape = Tape::new();
            let (x0, rec) = record_endpoint(&mut tape, &gen, z.clone(), &[1.0], cond, true).unwrap();
            let target = tape.value(x0) - &grad;
            let loss = dmdx::adm::record_dmd_loss(&mut tape, x0, &grad).unwrap();
            let g = rec.binding.grads(&gen.params, &tape.backward(loss).unwrap());
            compare(&[gen.params.clone()], &[g], |p| {
                let v = with_params(&gen, &p[0]).predict(&z, &[1.0], cond).unwrap();
                let x0 = endpoint_from_velocity(&sched, &z, &v, &[1.0]).unwrap();
                (&x0 - &target).mapv(|e| e * e).sum() / x0.nrows() as f64
            })
        }
        Role::GeneratorAdp => {
            let (gen, teacher) = (c.net(), c.net());
            let lat = Discriminator::new(&teacher, 4, &mut c.rng);
            let data = DataSpaceDiscriminator::new(c.cfg.data_dim, &[3, 4], 4, &mut c.rng).unwrap();
            let (xt, eps) = (c.mat(), c.mat());
            let (t, tp) = (c.times(0.0, 1.0), c.times(0.01, 1.0));
            let (l1, l2) = (0.85, 0.15);
            let mut tape = Tape::new();
            let (x0, rec) = record_endpoint(&mut tape, &gen, xt.clone(), &t, cond, true).unwrap();
            let xtp = record_diffuse(&mut tape, &sched, x0, &eps, &tp).unwrap();
            let a = lat.record(&mut tape, xtp, &tp, cond, false).unwrap();
            let b = data.record(&mut tape, x0, &[0.0], cond, false).unwrap();
            let a = tape.mean(a.logits);
            let b = tape.mean(b.logits);
            let a = tape.scale(a, -l1);
            let b = tape.scale(b, -l2);
            let loss = tape.add(a, b).unwrap();
            let g = rec.binding.grads(&gen.params, &tape.backward(loss).unwrap());
            compare(&[gen.params.clone()], &[g], |p| {
                let v = with_params(&gen, &p[0]).predict(&xt, &t, cond).unwrap();
                let x0 = endpoint_from_velocity(&sched, &xt, &v, &t).unwrap();
                let xtp = forward_diffuse(&sched, &x0, &eps, &tp).unwrap();
                -l1 * lat.logits(&xtp, &tp, cond).unwrap().mean().unwrap()
                    - l2 * data.logits(&x0, &[0.0], cond).unwrap().mean().unwrap()
            })
        }
        Role::DiscLatent => {
            let teacher = c.net();
            let disc = Discriminator::new(&teacher, 4, &mut c.rng);
            let (xf, xr) = (c.mat(), c.mat());
            let t = c.times(0.0, 1.0);
            critic_check(disc, &xf, &xr, &t, cond, |d, p| Discriminator {
                heads: p.to_vec(),
                ..d.clone()
            })
        }
        Role::DiscData => {
            let layers = c.rng.random_range(1..=3);
            let hidden: Vec<usize> = (0..layers).map(|_| c.rng.random_range(2..=5)).collect();
            let disc = DataSpaceDiscriminator::new(c.cfg.data_dim, &hidden, 3, &mut c.rng).unwrap();
            let (xf, xr) = (c.mat(), c.mat());
            let t = c.times(0.0, 1.0);
            critic_check(disc, &xf, &xr, &t, cond, |_, p| DataSpaceDiscriminator {
                trunk: p[0].clone(),
                heads: p[1..].to_vec(),
            })
        }
    }
}

fn critic_check<C: Critic>(
    disc: C,
    xf: &Mat,
    xr: &Mat,
    t: &[f64],
    cond: Cond<'_>,
    rebuild: impl Fn(&C, &[ParamStore]) -> C,
) -> f64 {
    let mut tape = Tape::new();
    let f = tape.constant(xf.clone());
    let r = tape.constant(xr.clone());
    let rf = disc.record(&mut tape, f, t, cond, true).unwrap();
    let rr = disc.record(&mut tape, r, t, cond, true).unwrap();
    let loss = record_hinge(&mut tape, rf.logits, rr.logits);
    let g = disc.grads(&[&rf, &rr], &tape.backward(loss).unwrap());
    let stores: Vec<ParamStore> = disc.trainable().into_iter().cloned().collect();
    compare(&stores, &g, |p| {
        let d = rebuild(&disc, p);
        hinge_loss(&d.logits(xf, t, cond).unwrap(), &d.logits(xr, t, cond).unwrap())
    })
}

/// A pipeline config that runs every stage in a few seconds.
pub fn small_run() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = 21;
    cfg.teacher.hidden = vec![16, 16];
    cfg.teacher.steps = 200;
    cfg.collect.n = 512;
    cfg.adp.iterations = 40;
    cfg.adp.batch = 32;
    cfg.adp.head_width = 8;
    cfg.adp.data_disc_hidden = vec![8];
    cfg.adm.max_iter = 30;
    cfg.adm.ttur = 2;
    cfg.adm.batch = 32;
    cfg.adm.head_width = 8;
    cfg.adm.probe_batch = 32;
    cfg.modes = vec![AdmMode::Adm, AdmMode::DmdBaseline];
    cfg.eval.samples = 500;
    cfg.eval.every = 10;
    cfg.eval.scatter = 100;
    cfg
}

/// Every file under `root`, keyed by relative path.
pub fn tree(root: &std::path::Path) -> std::collections::BTreeMap<std::path::PathBuf, Vec<u8>> {
    let mut out = std::collections::BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}
