use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use crate::adm::{generate, AdmConfig, AdmMode, AdmTrainer, GeneratorSchedule};
use crate::adp::{adp_train, collect_ode_pairs, AdpConfig, AdpTrainer, CollectSpec, OdePairDataset};
use crate::datasets::ToyDataset;
use crate::diffcore::{sample_endpoints, uniform_points, Cond, NoiseSchedule};
use crate::evallab::{
    divergence, mode_coverage, Grid, HistDensity, Metric, MetricsLog, ModeSpec, DEFAULT_EPS_MASS,
};
use crate::nnad::checkpoint::Role;
use crate::par::Exec;
use crate::rng::{derive_seed, normal_mat, stream};
use crate::scorenets::{teacher_train_step, Parameterization, ScoreNet, Trainee};
use crate::{Error, Mat, Result};

use super::config::{config_hash, file_digest, write_json, RunConfig, TeachConfig};
use super::plot::emit_plot_data;
use super::store::{
    claim_dir, load_net, load_pairs, meta_path, read_meta, save_disc_data, save_disc_lat, save_net,
    save_pairs, write_csv, Header,
};

pub const TEACHER_FILE: &str = "teacher.ckpt";
pub const GEN_FILE: &str = "gen.ckpt";
pub const FAKE_FILE: &str = "fake.ckpt";
pub const DISC_LAT_FILE: &str = "disc_lat.ckpt";
pub const DISC_DATA_FILE: &str = "disc_data.ckpt";
pub const PAIRS_FILE: &str = "pairs.bin";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const EVAL_FILE: &str = "eval.csv";

/// Flow-matching pre-training of a velocity teacher on `cfg.dataset`.
pub fn train_teacher(cfg: &TeachConfig, log: &mut MetricsLog) -> Result<Trainee> {
    let s = &cfg.teacher;
    s.validate()?;
    let sched = NoiseSchedule::flow_linear();
    let net = ScoreNet::new(
        s.net_config(&cfg.dataset),
        Parameterization::Velocity,
        sched.horizon(),
        &mut stream(cfg.seed, "teacher_init"),
    )?;
    let mut tr = Trainee::new(net, s.lr);
    let mut data_rng = stream(cfg.seed, "teacher_data");
    let mut step_rng = stream(cfg.seed, "teacher_step");
    let (mut acc, mut k) = (0.0, 0u64);
    for step in 1..=s.steps {
        let batch = cfg.dataset.sample(s.batch, &mut data_rng)?;
        acc += teacher_train_step(&mut tr, &sched, &batch, s.cond_drop, &mut step_rng)?;
        k += 1;
        if step % s.log_every == 0 || step == s.steps {
            log.record(step, "teacher_loss", acc / k as f64)?;
            (acc, k) = (0.0, 0);
        }
    }
    Ok(tr)
}

/// Euler PF-ODE samples of a velocity network from the given noise.
pub fn sample_teacher(teacher: &ScoreNet, z: &Mat, cond: Cond<'_>, steps: usize, exec: Exec) -> Result<Mat> {
    let sched = NoiseSchedule::flow_linear();
    sample_endpoints(&sched, teacher, z, cond, &uniform_points(teacher.horizon, steps), exec)
}

/// Samples of a stored network: its own generator schedule when it has
/// one, otherwise a `steps`-step Euler solve.
pub fn sample_stored(path: &Path, z: &Mat, steps: usize, exec: Exec) -> Result<Mat> {
    let stored = load_net(path)?;
    match &stored.meta.schedule {
        Some(s) => generate(&NoiseSchedule::flow_linear(), &stored.net, z, Cond::Null, s),
        None => sample_teacher(&stored.net, z, Cond::Null, steps, exec),
    }
}

/// Coverage of `dataset`'s modes and divergences of `samples` from the
/// true density and, when given, from `reference` samples.
pub fn evaluate(samples: &Mat, dataset: &ToyDataset, reference: Option<&Mat>) -> Result<Vec<(String, f64)>> {
    let mut rows = Vec::new();
    let cov = mode_coverage(samples, &ModeSpec::for_dataset(dataset));
    rows.push(("modes_covered".to_string(), cov.covered as f64));
    rows.push(("mode_fraction".to_string(), cov.fraction));
    if dataset.dim() != 2 {
        return Ok(rows);
    }
    let grid = Grid::ring_default();
    let fake = HistDensity::from_samples(samples, grid.clone(), DEFAULT_EPS_MASS)?;
    if dataset.components().is_some() {
        let truth = HistDensity::from_density(grid.clone(), DEFAULT_EPS_MASS, |x| {
            dataset.true_log_density(x).map_or(0.0, f64::exp)
        })?;
        for m in Metric::ALL {
            rows.push((m.name().to_string(), divergence(&fake, &truth, m)?));
        }
    }
    if let Some(r) = reference {
        let refd = HistDensity::from_samples(r, grid, DEFAULT_EPS_MASS)?;
        for m in Metric::ALL {
            rows.push((format!("ref_{}", m.name()), divergence(&fake, &refd, m)?));
        }
    }
    Ok(rows)
}

fn nested_digest(path: &Path) -> Result<String> {
    let mut d = file_digest(path)?;
    let m = meta_path(path);
    if m.exists() {
        d.push_str(&file_digest(&m)?);
    }
    Ok(d)
}

pub fn run_teach(cfg: &TeachConfig, out: &Path) -> Result<ScoreNet> {
    let header = Header::new(config_hash(&json!({"stage": "teach", "config": cfg}))?, cfg.seed, "teach");
    claim_dir(out, &header)?;
    write_json(&out.join(CONFIG_FILE), cfg)?;
    let mut log = MetricsLog::create(&out.join(METRICS_FILE), &header.line())?;
    let tr = train_teacher(cfg, &mut log)?;
    save_net(&out.join(TEACHER_FILE), Role::Teacher, &tr.net, Some(&tr.opt), None, &header)?;
    Ok(tr.net)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CollectArgs {
    pub n: usize,
    pub steps: usize,
    pub seed: u64,
    pub conditional: bool,
}

pub fn run_collect(args: &CollectArgs, teacher_path: &Path, out: &Path, exec: Exec) -> Result<OdePairDataset> {
    let teacher = load_net(teacher_path)?.net;
    let hash = config_hash(&json!({
        "stage": "collect",
        "n": args.n,
        "steps": args.steps,
        "seed": args.seed,
        "conditional": args.conditional,
        "teacher": nested_digest(teacher_path)?,
    }))?;
    let header = Header::new(hash, args.seed, "collect");
    if meta_path(out).exists() {
        let prev = read_meta(out)?.header();
        if prev != header {
            return Err(Error::Contract(format!(
                "{} was written by config hash {}; refusing to overwrite with {}",
                out.display(),
                prev.config_hash,
                header.config_hash
            )));
        }
    }
    if args.conditional && !teacher.is_conditional() {
        return Err(Error::Config("conditional pairs need a conditional teacher".into()));
    }
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent)?;
    }
    let spec = CollectSpec {
        n: args.n,
        steps: args.steps,
        seed: args.seed,
        num_classes: if args.conditional { teacher.config.num_classes } else { None },
    };
    let pairs = collect_ode_pairs(&NoiseSchedule::flow_linear(), &teacher, teacher.config.data_dim, &spec, exec)?;
    save_pairs(out, &pairs, &header)?;
    Ok(pairs)
}

pub fn run_adp(cfg: &AdpConfig, teacher_path: &Path, pairs_path: &Path, out: &Path) -> Result<AdpTrainer> {
    let teacher = load_net(teacher_path)?.net;
    let pairs = load_pairs(pairs_path)?;
    let hash = config_hash(&json!({
        "stage": "adp",
        "config": cfg,
        "teacher": nested_digest(teacher_path)?,
        "pairs": file_digest(pairs_path)?,
    }))?;
    let header = Header::new(hash, cfg.seed, "adp");
    claim_dir(out, &header)?;
    write_json(&out.join(CONFIG_FILE), cfg)?;
    let mut log = MetricsLog::create(&out.join(METRICS_FILE), &header.line())?;
    let tr = adp_train(cfg.clone(), &teacher, &pairs, &mut log)?;
    let one = GeneratorSchedule::one_step(teacher.horizon);
    save_net(&out.join(GEN_FILE), Role::Gen, &tr.gen.net, Some(&tr.gen.opt), Some(&one), &header)?;
    let n_lat = tr.disc_lat.heads.len();
    save_disc_lat(&out.join(DISC_LAT_FILE), &tr.disc_lat, &tr.disc_opt[..n_lat], &header)?;
    save_disc_data(&out.join(DISC_DATA_FILE), &tr.disc_data, &tr.disc_opt[n_lat..], &header)?;
    Ok(tr)
}

/// In-run evaluation of the generator on fixed noise.
pub struct EvalHook<'a> {
    pub dataset: &'a ToyDataset,
    pub every: u64,
    pub z: Mat,
    pub reference: Option<&'a Mat>,
}

pub fn run_adm(
    cfg: &AdmConfig,
    mode: AdmMode,
    teacher_path: &Path,
    init_path: &Path,
    out: &Path,
    hook: Option<EvalHook<'_>>,
) -> Result<AdmTrainer> {
    let teacher = load_net(teacher_path)?.net;
    let init = load_net(init_path)?;
    if !matches!(init.role, Role::Teacher | Role::Gen) {
        return Err(Error::Config(format!("cannot initialise a generator from a {} checkpoint", init.role.name())));
    }
    let hash = config_hash(&json!({
        "stage": "adm",
        "config": cfg,
        "mode": mode,
        "teacher": nested_digest(teacher_path)?,
        "init": file_digest(init_path)?,
    }))?;
    let header = Header::new(hash, cfg.seed, "adm");
    claim_dir(out, &header)?;
    write_json(&out.join(CONFIG_FILE), cfg)?;
    let mut log = MetricsLog::create(&out.join(METRICS_FILE), &header.line())?;
    let mut tr = AdmTrainer::new(cfg.clone(), mode, &teacher, &init.net)?;
    match hook {
        Some(h) if h.every > 0 => tr.run_with(&mut log, |tr, log| {
            if tr.gen_iter % h.every != 0 {
                return Ok(());
            }
            let x = tr.sample(&h.z, Cond::Null)?;
            for (name, v) in evaluate(&x, h.dataset, h.reference)? {
                log.record(tr.global_iter, &format!("eval_{name}"), v)?;
            }
            Ok(())
        })?,
        _ => tr.run(&mut log)?,
    }
    save_net(&out.join(GEN_FILE), Role::Gen, &tr.gen.net, Some(&tr.gen.opt), Some(&cfg.schedule), &header)?;
    save_net(&out.join(FAKE_FILE), Role::Fake, &tr.fake.net, Some(&tr.fake.opt), None, &header)?;
    if let Some(d) = &tr.disc {
        save_disc_lat(&out.join(DISC_LAT_FILE), d, &tr.disc_opt, &header)?;
    }
    Ok(tr)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalArgs {
    pub dataset: ToyDataset,
    pub n: usize,
    pub seed: u64,
    /// Euler steps for networks without a generator schedule.
    pub steps: usize,
}

pub fn run_eval(
    gen_path: &Path,
    reference_path: Option<&Path>,
    args: &EvalArgs,
    out: Option<&Path>,
    exec: Exec,
) -> Result<Vec<(String, f64)>> {
    if args.n == 0 || args.steps == 0 {
        return Err(Error::Config("eval needs n and steps ≥ 1".into()));
    }
    let d = args.dataset.dim();
    let z = normal_mat(&mut stream(args.seed, "eval"), args.n, d);
    let x = sample_stored(gen_path, &z, args.steps, exec)?;
    let reference = match reference_path {
        Some(p) => {
            let zr = normal_mat(&mut stream(args.seed, "eval_reference"), args.n, d);
            Some(sample_stored(p, &zr, args.steps, exec)?)
        }
        None => None,
    };
    let rows = evaluate(&x, &args.dataset, reference.as_ref())?;
    if let Some(path) = out {
        let hash = config_hash(&json!({
            "stage": "eval",
            "gen": file_digest(gen_path)?,
            "reference": reference_path.map(file_digest).transpose()?,
            "dataset": args.dataset,
            "n": args.n,
            "steps": args.steps,
        }))?;
        let header = Header::new(hash, args.seed, "eval");
        let lines: Vec<String> = rows.iter().map(|(m, v)| format!("{m},{v:e}")).collect();
        write_csv(path, &header, "metric,value", &lines)?;
    }
    Ok(rows)
}

/// Paths of a finished pipeline run.
#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub teacher: PathBuf,
    pub init: PathBuf,
    /// Final generator of each mode.
    pub generators: Vec<(AdmMode, PathBuf)>,
    pub eval: PathBuf,
}

/// Seeds of the stages of a pipeline run.
pub fn stage_seed(run_seed: u64, stage: &str) -> u64 {
    derive_seed(run_seed, stage)
}

/// teacher → collect → ADP → ADM (per mode) → eval → plot data.
pub fn run_pipeline(cfg: &RunConfig, out: &Path, exec: Exec) -> Result<PipelineOutput> {
    cfg.validate()?;
    let header = Header::new(config_hash(&json!({"stage": "pipeline", "config": cfg}))?, cfg.seed, "pipeline");
    claim_dir(out, &header)?;
    write_json(&out.join(CONFIG_FILE), cfg)?;

    let teach = TeachConfig {
        dataset: cfg.dataset.clone(),
        seed: stage_seed(cfg.seed, "teach"),
        teacher: cfg.teacher.clone(),
    };
    let teacher_dir = out.join("teacher");
    log::info!("training teacher for {} steps", teach.teacher.steps);
    let teacher = run_teach(&teach, &teacher_dir)?;
    let teacher_path = teacher_dir.join(TEACHER_FILE);

    let init = if cfg.adp.iterations > 0 {
        let pairs_path = out.join("pairs").join(PAIRS_FILE);
        let args = CollectArgs {
            n: cfg.collect.n,
            steps: cfg.collect.steps,
            seed: stage_seed(cfg.seed, "collect"),
            conditional: cfg.collect.conditional,
        };
        log::info!("collecting {} ODE pairs", args.n);
        run_collect(&args, &teacher_path, &pairs_path, exec)?;
        let adp = AdpConfig {
            seed: stage_seed(cfg.seed, "adp"),
            ..cfg.adp.clone()
        };
        log::info!("adversarial pre-training for {} iterations", adp.iterations);
        run_adp(&adp, &teacher_path, &pairs_path, &out.join("adp"))?;
        out.join("adp").join(GEN_FILE)
    } else {
        teacher_path.clone()
    };

    let d = cfg.dataset.dim();
    let ev = &cfg.eval;
    let z = normal_mat(&mut stream(cfg.seed, "eval"), ev.samples, d);
    let zr = normal_mat(&mut stream(cfg.seed, "eval_reference"), ev.samples, d);
    let reference = sample_teacher(&teacher, &zr, Cond::Null, ev.teacher_steps, exec)?;

    let adm_cfg = AdmConfig {
        seed: stage_seed(cfg.seed, "adm"),
        ..cfg.adm.clone()
    };
    let mut eval_rows = Vec::new();
    let teacher_x = sample_teacher(&teacher, &z, Cond::Null, ev.teacher_steps, exec)?;
    for (m, v) in evaluate(&teacher_x, &cfg.dataset, Some(&reference))? {
        eval_rows.push(format!("teacher,{m},{v:e}"));
    }
    let mut generators = Vec::new();
    for &mode in &cfg.modes {
        let dir = out.join(mode.name());
        log::info!("{} distillation for {} generator updates", mode.name(), adm_cfg.max_iter);
        let hook = EvalHook {
            dataset: &cfg.dataset,
            every: ev.every,
            z: z.clone(),
            reference: Some(&reference),
        };
        let tr = run_adm(&adm_cfg, mode, &teacher_path, &init, &dir, Some(hook))?;
        let x = tr.sample(&z, Cond::Null)?;
        for (m, v) in evaluate(&x, &cfg.dataset, Some(&reference))? {
            eval_rows.push(format!("{},{m},{v:e}", mode.name()));
        }
        generators.push((mode, dir.join(GEN_FILE)));
    }
    let eval = out.join(EVAL_FILE);
    write_csv(&eval, &header, "model,metric,value", &eval_rows)?;
    emit_plot_data(out, ev.scatter, ev.teacher_steps, cfg.seed, exec)?;
    Ok(PipelineOutput {
        teacher: teacher_path,
        init,
        generators,
        eval,
    })
}
