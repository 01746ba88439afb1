//! The network roles: teacher and fake estimators, generator and the two
//! multi-head discriminators, plus teacher pre-training and guidance.

mod disc;
mod net;
mod train;

pub use disc::{Critic, CriticRecord, DataSpaceDiscriminator, Discriminator, HEAD_WIDTH};
pub use net::{clone_params, NetConfig, Parameterization, ScoreNet};
pub use train::{
    drop_labels, flow_matching_grads, flow_matching_loss, hinge_loss, record_diffuse,
    record_endpoint, record_hinge, teacher_train_step, Trainee,
};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::ToyDataset;
    use crate::diffcore::{Cond, NoiseSchedule, SampleBatch, VelocityModel};
    use crate::nnad::checkpoint::{encode, Checkpoint, Role};
    use crate::nnad::{Activation, AdamW, Layer, OptState, ParamStore, Tape};
    use crate::rng::{normal_mat, stream, uniform_vec};
    use crate::{Error, Mat};
    use ndarray::{array, Array1};

    fn small_config(classes: Option<usize>) -> NetConfig {
        NetConfig {
            data_dim: 2,
            hidden: vec![16, 16],
            temb_dim: 8,
            num_classes: classes,
        }
    }

    fn small_net(seed: u64, classes: Option<usize>) -> ScoreNet {
        ScoreNet::new(
            small_config(classes),
            Parameterization::Velocity,
            1.0,
            &mut stream(seed, "init"),
        )
        .unwrap()
    }

    #[test]
    fn output_matches_data_dim() {
        let net = small_net(1, Some(8));
        let x = normal_mat(&mut stream(2, "x"), 5, 2);
        let out = net.predict(&x, &[0.3], Cond::Null).unwrap();
        assert_eq!(out.dim(), (5, 2));
        assert!(net.predict(&normal_mat(&mut stream(2, "x"), 5, 3), &[0.3], Cond::Null).is_err());
        assert!(net.predict(&x, &[1.5], Cond::Null).is_err());
    }

    #[test]
    fn zero_network_loss_is_twice_the_dimension() {
        let dims = small_config(None).dims();
        let net = ScoreNet::from_params(
            ParamStore::zeros(&dims, Activation::Silu),
            small_config(None),
            Parameterization::Velocity,
            1.0,
        )
        .unwrap();
        let sched = NoiseSchedule::flow_linear();
        let n = 20_000;
        let mut rng = stream(3, "loss");
        let x0 = normal_mat(&mut rng, n, 2);
        let eps = normal_mat(&mut rng, n, 2);
        let t = uniform_vec(&mut rng, n, 0.0, 1.0);
        let loss = flow_matching_loss(&net, &sched, &x0, &eps, &t, Cond::Null).unwrap();
        // ‖ε − x₀‖² is 2·χ²₂ with standard deviation 4.
        assert!((loss - 4.0).abs() < 5.0 * 4.0 / (n as f64).sqrt(), "{loss}");
    }

    #[test]
    fn loss_is_permutation_invariant() {
        let net = small_net(4, None);
        let sched = NoiseSchedule::flow_linear();
        let mut rng = stream(5, "perm");
        let x0 = normal_mat(&mut rng, 6, 2);
        let eps = normal_mat(&mut rng, 6, 2);
        let t = uniform_vec(&mut rng, 6, 0.0, 1.0);
        let perm = [3usize, 0, 5, 1, 4, 2];
        let pick = |m: &Mat| Mat::from_shape_fn((6, 2), |(i, j)| m[[perm[i], j]]);
        let tp: Vec<f64> = perm.iter().map(|&i| t[i]).collect();
        let a = flow_matching_grads(&net, &sched, &x0, &eps, &t, Cond::Null).unwrap().0;
        let b = flow_matching_grads(&net, &sched, &pick(&x0), &pick(&eps), &tp, Cond::Null)
            .unwrap()
            .0;
        assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
        let pure = flow_matching_loss(&net, &sched, &x0, &eps, &t, Cond::Null).unwrap();
        assert!((a - pure).abs() < 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn teacher_step_reduces_loss_on_fixed_batch() {
        let ds = ToyDataset::ring8();
        let sched = NoiseSchedule::flow_linear();
        let mut teacher = Trainee::new(small_net(6, Some(8)), 1e-3);
        let batch = ds.sample(256, &mut stream(7, "data")).unwrap();
        let mut rng = stream(8, "step");
        let first = teacher_train_step(&mut teacher, &sched, &batch, 0.1, &mut rng).unwrap();
        let mut last = first;
        for _ in 0..200 {
            last = teacher_train_step(&mut teacher, &sched, &batch, 0.1, &mut rng).unwrap();
        }
        assert!(last < first, "{first} -> {last}");
        assert_eq!(teacher.opt.step, 201);
        assert!(teacher_train_step(&mut teacher, &sched, &batch, 1.5, &mut rng).is_err());
    }

    #[test]
    fn zero_heads_give_zero_logit() {
        let teacher = small_net(9, None);
        let mut d = Discriminator::new(&teacher, HEAD_WIDTH, &mut stream(10, "heads"));
        d.zero_heads();
        let x = normal_mat(&mut stream(11, "x"), 4, 2);
        let l = d.logits(&x, &[0.4], Cond::Null).unwrap();
        assert_eq!(l.dim(), (4, 1));
        assert!(l.iter().all(|&z| z == 0.0));
    }

    #[test]
    fn hand_set_single_head() {
        let config = NetConfig {
            data_dim: 1,
            hidden: vec![1],
            temb_dim: 2,
            num_classes: None,
        };
        let backbone = ParamStore::from_layers(vec![
            Layer {
                weight: array![[1.0, 0.0, 0.0]],
                bias: array![0.5],
                activation: Activation::Silu,
            },
            Layer {
                weight: array![[1.0]],
                bias: Array1::zeros(1),
                activation: Activation::Identity,
            },
        ])
        .unwrap();
        let head = ParamStore::from_layers(vec![
            Layer {
                weight: array![[2.0]],
                bias: array![0.0],
                activation: Activation::Silu,
            },
            Layer {
                weight: array![[3.0]],
                bias: array![1.0],
                activation: Activation::Identity,
            },
        ])
        .unwrap();
        let d = Discriminator {
            backbone: ScoreNet::from_params(backbone, config, Parameterization::Velocity, 1.0).unwrap(),
            heads: vec![head],
        };
        let l = d.logits(&array![[0.5]], &[0.2], Cond::Null).unwrap();
        // 3·silu(2·silu(1)) + 1
        assert!((l[[0, 0]] - 4.561086966338217).abs() < 1e-12);
    }

    #[test]
    fn logit_depends_on_time() {
        let teacher = small_net(12, None);
        let d = Discriminator::new(&teacher, HEAD_WIDTH, &mut stream(13, "heads"));
        let x = normal_mat(&mut stream(14, "x"), 1, 2);
        let a = d.logits(&x, &[0.2], Cond::Null).unwrap();
        let b = d.logits(&x, &[0.8], Cond::Null).unwrap();
        assert_ne!(a[[0, 0]], b[[0, 0]]);
    }

    #[test]
    fn recorded_logits_match_pure_and_skip_backbone() {
        let teacher = small_net(15, Some(8));
        let d = Discriminator::new(&teacher, 8, &mut stream(16, "heads"));
        let x = normal_mat(&mut stream(17, "x"), 3, 2);
        let labels = [1usize, 2, 3];
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone(), true);
        let rec = d.record(&mut tape, xv, &[0.5], Cond::Labels(&labels), true).unwrap();
        assert_eq!(tape.value(rec.logits), &d.logits(&x, &[0.5], Cond::Labels(&labels)).unwrap());
        let m = tape.mean(rec.logits);
        let g = tape.backward(m).unwrap();
        assert!(g.get(xv).is_some());
        assert_eq!(d.grads(&[&rec], &g).len(), d.heads.len());
    }

    #[test]
    fn backbone_untouched_by_head_updates() {
        let teacher = small_net(18, None);
        let mut d = Discriminator::new(&teacher, 8, &mut stream(19, "heads"));
        let before = d.backbone_digest();
        assert_eq!(before, teacher.params.digest());
        let adam = AdamW::new(1e-3);
        let mut states: Vec<OptState> = d.heads.iter().map(OptState::new).collect();
        let mut rng = stream(20, "x");
        for _ in 0..1000 {
            let x = normal_mat(&mut rng, 8, 2);
            let mut tape = Tape::new();
            let xv = tape.constant(x);
            let rec = d.record(&mut tape, xv, &[0.5], Cond::Null, true).unwrap();
            let relu = {
                let s = tape.add_scalar(rec.logits, 1.0);
                tape.relu(s)
            };
            let loss = tape.mean(relu);
            let g = tape.backward(loss).unwrap();
            let grads = d.grads(&[&rec], &g);
            adam.step_all(d.trainable_mut(), &grads, &mut states).unwrap();
        }
        assert_eq!(d.backbone_digest(), before);
        assert_eq!(states[0].step, 1000);
    }

    #[test]
    fn data_space_discriminator_trains_trunk_and_heads() {
        let d = DataSpaceDiscriminator::new(2, &[16, 16], 8, &mut stream(21, "dd")).unwrap();
        assert_eq!(d.trainable().len(), 3);
        let x = normal_mat(&mut stream(22, "x"), 4, 2);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let rec = d.record(&mut tape, xv, &[0.0], Cond::Null, true).unwrap();
        assert_eq!(tape.value(rec.logits), &d.logits(&x, &[0.9], Cond::Null).unwrap());
        let m = tape.mean(rec.logits);
        let g = tape.backward(m).unwrap();
        let grads = d.grads(&[&rec], &g);
        assert!(grads[0].norm() > 0.0 && grads[1].norm() > 0.0);
        assert!(DataSpaceDiscriminator::new(2, &[], 8, &mut stream(0, "dd")).is_err());
    }

    #[test]
    fn clone_is_independent() {
        let src = small_net(23, Some(8));
        let mut copy = clone_params(&src);
        let x = normal_mat(&mut stream(24, "x"), 100, 2);
        let t = uniform_vec(&mut stream(25, "t"), 100, 0.0, 1.0);
        let y0 = src.velocity(&x, &t, Cond::Null).unwrap();
        assert_eq!(copy.velocity(&x, &t, Cond::Null).unwrap(), y0);
        let ck = |n: &ScoreNet| {
            encode(&[Checkpoint {
                role: Role::Teacher,
                params: n.params.clone(),
                opt: None,
            }])
        };
        assert_eq!(ck(&src), ck(&copy));
        let mut tr = Trainee::new(copy.clone(), 1e-2);
        let batch = SampleBatch::new(x.clone()).unwrap();
        teacher_train_step(&mut tr, &NoiseSchedule::flow_linear(), &batch, 0.0, &mut stream(26, "s"))
            .unwrap();
        copy = tr.net;
        assert_ne!(copy.velocity(&x, &t, Cond::Null).unwrap(), y0);
        assert_eq!(src.velocity(&x, &t, Cond::Null).unwrap(), y0);
    }

    #[test]
    fn guidance_endpoints_and_affinity() {
        let net = small_net(27, Some(8));
        let x = normal_mat(&mut stream(28, "x"), 5, 2);
        let labels = [0usize, 1, 2, 3, 4];
        let t = [0.6];
        let vc = net.predict(&x, &t, Cond::Labels(&labels)).unwrap();
        let vu = net.predict(&x, &t, Cond::Null).unwrap();
        assert_eq!(net.cfg_velocity(&x, &t, &labels, &[1.0]).unwrap(), vc);
        assert_eq!(net.cfg_velocity(&x, &t, &labels, &[0.0]).unwrap(), vu);
        let g = |w: f64| net.cfg_velocity(&x, &t, &labels, &[w]).unwrap();
        let mid = (g(1.0) + g(5.0)) / 2.0;
        let diff = (&mid - &g(3.0)).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(diff < 1e-12);
        assert!(net.cfg_velocity(&x, &t, &labels, &[-1.0]).is_err());
        let uncond = small_net(29, None);
        assert!(matches!(
            uncond.cfg_velocity(&x, &t, &labels, &[2.0]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn guidance_linear_combination() {
        // Output layer reads only the one-hot slots: class 0 gives (1, 2),
        // the null slot gives (0, 0).
        let config = NetConfig {
            data_dim: 2,
            hidden: vec![3],
            temb_dim: 2,
            num_classes: Some(2),
        };
        let mut w0 = Mat::zeros((3, 7));
        w0[[0, 4]] = 1.0;
        let params = ParamStore::from_layers(vec![
            Layer {
                weight: w0,
                bias: Array1::zeros(3),
                activation: Activation::Identity,
            },
            Layer {
                weight: array![[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]],
                bias: Array1::zeros(2),
                activation: Activation::Identity,
            },
        ])
        .unwrap();
        let net = ScoreNet::from_params(params, config, Parameterization::Velocity, 1.0).unwrap();
        let v = net.cfg_velocity(&array![[0.3, -0.2]], &[0.5], &[0], &[3.0]).unwrap();
        assert_eq!(v, array![[3.0, 6.0]]);
    }

    #[test]
    fn unconditional_net_rejects_labels() {
        let net = small_net(30, None);
        let x = normal_mat(&mut stream(31, "x"), 2, 2);
        assert!(net.predict(&x, &[0.5], Cond::Labels(&[1, 2])).is_err());
        let cond = small_net(32, Some(2));
        assert!(cond.predict(&x, &[0.5], Cond::Labels(&[1, 5])).is_err());
    }
}
