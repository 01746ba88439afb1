//! Adversarial distribution matching: the alternating fake, generator and
//! discriminator updates with one-step score predictions, and the DMD
//! baseline it is compared against.

mod ops;
mod trainer;

pub use ops::{
    adm_discriminator_loss, adm_generator_loss, dmd_gradient, dmd_gradient_from_models, dmd_loss,
    generate, multi_step_rollout, real_velocity, record_dmd_loss, score_prediction_pair,
    target_times, GeneratorSchedule, DMD_DENOM_FLOOR,
};
pub use trainer::{
    adm_train, AdmConfig, AdmMode, AdmTrainer, TraceEvent, TrainerStats, UpdateKind,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{Cond, NoiseSchedule};
    use crate::evallab::MetricsLog;
    use crate::nnad::{Activation, ParamStore, Tape};
    use crate::rng::{normal_mat, stream, uniform_vec};
    use crate::scorenets::{flow_matching_loss, NetConfig, Parameterization, ScoreNet};
    use ndarray::array;

    fn net_config(classes: Option<usize>) -> NetConfig {
        NetConfig {
            data_dim: 2,
            hidden: vec![16, 16],
            temb_dim: 8,
            num_classes: classes,
        }
    }

    fn net(seed: u64, classes: Option<usize>) -> ScoreNet {
        ScoreNet::new(net_config(classes), Parameterization::Velocity, 1.0, &mut stream(seed, "n")).unwrap()
    }

    fn small(ttur: u64, schedule: GeneratorSchedule) -> AdmConfig {
        AdmConfig {
            ttur,
            max_iter: 3,
            batch: 16,
            schedule,
            head_width: 8,
            probe_batch: 32,
            ..AdmConfig::default()
        }
    }

    #[test]
    fn schedules() {
        let one = GeneratorSchedule::one_step(1.0);
        assert_eq!(one.steps(), 1);
        assert_eq!((one.time(1), one.time(0)), (1.0, 0.0));
        let four = GeneratorSchedule::four_step(1.0);
        assert_eq!(four.points(), &[1.0, 0.75, 0.5, 0.25, 0.0]);
        assert_eq!(four.time(3), 0.75);
        assert!(GeneratorSchedule::new(vec![1.0, 0.5, 0.5, 0.0]).is_err());
        assert!(GeneratorSchedule::new(vec![1.0, 0.5]).is_err());
        assert!(serde_json::from_str::<GeneratorSchedule>("[1.0, 0.2, 0.4, 0.0]").is_err());
        assert_eq!(AdmConfig::default().delta_t, 1.0 / 64.0);
        assert_eq!(AdmConfig::default().delta_t, 0.015625);
    }

    #[test]
    fn rollout_examples() {
        let sched = NoiseSchedule::flow_linear();
        let g = net(1, None);
        let z = normal_mat(&mut stream(2, "z"), 5, 2);
        let four = GeneratorSchedule::four_step(1.0);
        assert_eq!(multi_step_rollout(&sched, &g, &z, Cond::Null, 4, &four).unwrap(), z);
        let one = GeneratorSchedule::one_step(1.0);
        assert_eq!(multi_step_rollout(&sched, &g, &z, Cond::Null, 1, &one).unwrap(), z);
        assert!(multi_step_rollout(&sched, &g, &z, Cond::Null, 2, &one).is_err());
        assert!(multi_step_rollout(&sched, &g, &z, Cond::Null, 0, &four).is_err());
        let a = multi_step_rollout(&sched, &g, &z, Cond::Null, 2, &four).unwrap();
        assert_eq!(a, multi_step_rollout(&sched, &g, &z, Cond::Null, 2, &four).unwrap());
        assert_ne!(a, z);
        let v = g.predict(&z, &[1.0], Cond::Null).unwrap();
        assert_eq!(generate(&sched, &g, &z, Cond::Null, &one).unwrap(), &z - &v);
    }

    #[test]
    fn score_pair_examples() {
        let sched = NoiseSchedule::flow_linear();
        let f = net(3, Some(4));
        let x = normal_mat(&mut stream(4, "x"), 6, 2);
        let t = uniform_vec(&mut stream(5, "t"), 6, 0.0, 1.0);
        let (a, b) = score_prediction_pair(&sched, &f, &f, &x, &t, 1.0 / 64.0, Cond::Null, None).unwrap();
        assert_eq!(a, b);
        let zero = ScoreNet::from_params(
            ParamStore::zeros(&net_config(None).dims(), Activation::Silu),
            net_config(None),
            Parameterization::Velocity,
            1.0,
        )
        .unwrap();
        let (a, b) = score_prediction_pair(&sched, &zero, &zero, &x, &t, 1.0 / 64.0, Cond::Null, None).unwrap();
        assert_eq!(a, x);
        assert_eq!(b, x);
        let labels = [0usize, 1, 2, 3, 0, 1];
        let w = [2.0; 6];
        let (a, b) =
            score_prediction_pair(&sched, &f, &f, &x, &t, 1.0 / 64.0, Cond::Labels(&labels), Some(&w)).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn clamped_targets() {
        let (tp, c) = target_times(&[0.5, 0.01, 0.015625, 0.02], 1.0 / 64.0);
        assert_eq!(c, 2);
        assert_eq!(tp[1], 0.0);
        assert_eq!(tp[2], 0.0);
        assert!((tp[0] - (0.5 - 1.0 / 64.0)).abs() < 1e-16);
    }

    #[test]
    fn gan_loss_examples() {
        assert_eq!(adm_generator_loss(&array![[0.0]]), 0.0);
        assert_eq!(adm_generator_loss(&array![[2.0]]), -2.0);
        assert_eq!(adm_generator_loss(&array![[1.0], [-1.0]]), 0.0);
        assert_eq!(adm_discriminator_loss(&array![[-1.0]], &array![[1.0]]), 0.0);
        assert_eq!(adm_discriminator_loss(&array![[0.0]], &array![[0.0]]), 2.0);
        assert_eq!(adm_discriminator_loss(&array![[3.0]], &array![[-3.0]]), 8.0);
    }

    #[test]
    fn dmd_gradient_examples() {
        let x0 = array![[2.0, 2.0]];
        let z = dmd_gradient(&x0, &array![[0.3, -1.0]], &array![[0.3, -1.0]]).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
        let g = dmd_gradient(&x0, &array![[1.0, 1.0]], &array![[0.0, 0.0]]).unwrap();
        assert_eq!(g, array![[0.5, 0.5]]);
        let g3 = dmd_gradient(&x0, &array![[3.0, 3.0]], &array![[0.0, 0.0]]).unwrap();
        assert_eq!(g3, array![[1.5, 1.5]]);
        let floor = dmd_gradient(&array![[0.0, 0.0]], &array![[1e-9, 0.0]], &array![[0.0, 0.0]]).unwrap();
        assert!((floor[[0, 0]] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn dmd_loss_examples_and_gradient() {
        let x0 = array![[1.0, -2.0]];
        assert_eq!(dmd_loss(&x0, &array![[0.0, 0.0]]).unwrap(), 0.0);
        assert_eq!(dmd_loss(&x0, &array![[0.5, 0.5]]).unwrap(), 0.5);
        let mut rng = stream(6, "dmd");
        for rows in [1usize, 5] {
            let x0 = normal_mat(&mut rng, rows, 3);
            let grad = normal_mat(&mut rng, rows, 3);
            let mut tape = Tape::new();
            let v = tape.leaf(x0.clone(), true);
            let l = record_dmd_loss(&mut tape, v, &grad).unwrap();
            let pure = dmd_loss(&x0, &grad).unwrap();
            assert!((tape.scalar(l) - pure).abs() < 1e-12);
            let g = tape.backward(l).unwrap();
            let expect = &grad * (2.0 / rows as f64);
            let err = (g.get(v).unwrap() - &expect).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
            assert!(err <= 1e-9, "{err}");
        }
    }

    #[test]
    fn probe_is_zero_when_fake_equals_real_and_deterministic() {
        let t = net(7, None);
        let g = net(8, None);
        let tr = AdmTrainer::new(small(1, GeneratorSchedule::four_step(1.0)), AdmMode::Adm, &t, &g).unwrap();
        assert_eq!(tr.probe().unwrap(), 0.0);
        let mut a = AdmTrainer::new(small(1, GeneratorSchedule::one_step(1.0)), AdmMode::Adm, &t, &g).unwrap();
        let mut b = AdmTrainer::new(small(1, GeneratorSchedule::one_step(1.0)), AdmMode::Adm, &t, &g).unwrap();
        let (mut la, mut lb) = (MetricsLog::in_memory(), MetricsLog::in_memory());
        a.step(&mut la).unwrap();
        b.step(&mut lb).unwrap();
        assert_eq!(a.probe().unwrap(), b.probe().unwrap());
        assert!(a.probe().unwrap() > 0.0);
    }

    #[test]
    fn zero_heads_give_zero_first_generator_gradient() {
        let t = net(9, None);
        let mut tr = AdmTrainer::new(small(1, GeneratorSchedule::four_step(1.0)), AdmMode::Adm, &t, &t).unwrap();
        tr.disc.as_mut().unwrap().zero_heads();
        let before = tr.gen.net.clone();
        let (loss, _, norm) = tr.generator_update().unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(norm, 0.0);
        assert_eq!(tr.gen.net, before);
    }

    #[test]
    fn teacher_initialised_fake_matches_teacher_loss() {
        let sched = NoiseSchedule::flow_linear();
        let t = net(10, None);
        let g = net(11, None);
        let tr = AdmTrainer::new(small(1, GeneratorSchedule::one_step(1.0)), AdmMode::Adm, &t, &g).unwrap();
        let mut rng = stream(12, "f");
        let z = normal_mat(&mut rng, 32, 2);
        let x0 = tr.sample(&z, Cond::Null).unwrap();
        let eps = normal_mat(&mut rng, 32, 2);
        let ts = uniform_vec(&mut rng, 32, 0.0, 1.0);
        assert_eq!(
            flow_matching_loss(&tr.fake.net, &sched, &x0, &eps, &ts, Cond::Null).unwrap(),
            flow_matching_loss(&t, &sched, &x0, &eps, &ts, Cond::Null).unwrap()
        );
    }

    #[test]
    fn ttur_gate_trace() {
        let t = net(13, None);
        let mut tr = AdmTrainer::new(small(4, GeneratorSchedule::four_step(1.0)), AdmMode::Adm, &t, &t).unwrap();
        tr.enable_trace();
        let mut log = MetricsLog::in_memory();
        for _ in 0..10 {
            tr.step(&mut log).unwrap();
            assert!(tr.gen_iter * 4 <= tr.global_iter && tr.global_iter < (tr.gen_iter + 1) * 4);
        }
        let ev = tr.trace.as_ref().unwrap();
        let count = |k| ev.iter().filter(|e| e.kind == k).count();
        assert_eq!((count(UpdateKind::Fake), count(UpdateKind::Gen), count(UpdateKind::Disc)), (10, 2, 2));
        let gens: Vec<u64> = ev.iter().filter(|e| e.kind == UpdateKind::Gen).map(|e| e.global_iter).collect();
        assert_eq!(gens, vec![4, 8]);
        assert_eq!(tr.gen_iter, 2);
        let mut tr1 = AdmTrainer::new(small(1, GeneratorSchedule::one_step(1.0)), AdmMode::Adm, &t, &t).unwrap();
        for _ in 0..3 {
            tr1.step(&mut log_fresh()).unwrap();
        }
        assert_eq!(tr1.gen_iter, 3);
    }

    fn log_fresh() -> MetricsLog {
        MetricsLog::in_memory()
    }

    #[test]
    fn seeded_runs_are_identical() {
        let t = net(14, Some(4));
        let g = net(15, Some(4));
        let cfg = AdmConfig {
            conditional: true,
            cfg_range: Some([1.0, 2.0]),
            ..small(2, GeneratorSchedule::four_step(1.0))
        };
        let run = |mode| {
            let mut log = MetricsLog::in_memory();
            let tr = adm_train(cfg.clone(), mode, &t, &g, &mut log).unwrap();
            (tr.gen.net.params.digest(), log.rows().to_vec(), tr.global_iter)
        };
        let a = run(AdmMode::Adm);
        assert_eq!(a, run(AdmMode::Adm));
        assert_eq!(a.2, 6);
        let d = run(AdmMode::DmdBaseline);
        assert_eq!(d, run(AdmMode::DmdBaseline));
        assert!(d.1.iter().all(|r| r.metric != "disc_loss"));
        assert!(a.1.iter().any(|r| r.metric == "disc_loss"));
    }

    #[test]
    fn config_rejections() {
        let t = net(16, None);
        let bad = AdmConfig {
            ttur: 0,
            ..AdmConfig::default()
        };
        assert!(AdmTrainer::new(bad, AdmMode::Adm, &t, &t).is_err());
        let guided = AdmConfig {
            cfg_range: Some([1.0, 2.0]),
            ..AdmConfig::default()
        };
        assert!(AdmTrainer::new(guided, AdmMode::Adm, &t, &t).is_err());
        assert!(serde_json::from_str::<AdmConfig>(r#"{"ttur":2,"typo":true}"#).is_err());
        let c: AdmConfig = serde_json::from_str(r#"{"ttur":2,"schedule":[1.0,0.0]}"#).unwrap();
        assert_eq!(c.schedule, GeneratorSchedule::one_step(1.0));
        assert_eq!(serde_json::from_str::<AdmMode>(r#""dmd""#).unwrap(), AdmMode::DmdBaseline);
    }
}
