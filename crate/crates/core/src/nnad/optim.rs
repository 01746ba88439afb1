use serde::{Deserialize, Serialize};

use super::mlp::{ParamGrads, ParamStore};
use crate::{Error, Result};

/// AdamW without weight decay, `betas = (0.0, 0.99)`, bias-corrected.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.0,
            beta2: 0.99,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First/second moments and the step counter of one parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct OptState {
    pub m: ParamGrads,
    pub v: ParamGrads,
    pub step: u64,
    /// Updates rejected because of non-finite gradients.
    pub skipped: u64,
}

impl OptState {
    pub fn new(params: &ParamStore) -> Self {
        Self {
            m: ParamGrads::zeros_like(params),
            v: ParamGrads::zeros_like(params),
            step: 0,
            skipped: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Applied,
    /// Non-finite gradient; parameters and moments left untouched.
    Skipped,
}

impl AdamW {
    /// Applies one update in place.
    pub fn step(
        &self,
        params: &mut ParamStore,
        grads: &ParamGrads,
        state: &mut OptState,
    ) -> Result<StepOutcome> {
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.lr)));
        }
        let aligned = grads.layers.len() == params.layers.len()
            && state.m.layers.len() == params.layers.len()
            && grads
                .layers
                .iter()
                .zip(&params.layers)
                .all(|((gw, gb), l)| gw.dim() == l.weight.dim() && gb.len() == l.bias.len());
        if !aligned {
            return Err(Error::Shape("gradient shapes do not match parameters".into()));
        }
        if !grads.is_finite() {
            state.skipped += 1;
            log::warn!(
                "non-finite gradient, skipping update (skipped so far: {})",
                state.skipped
            );
            return Ok(StepOutcome::Skipped);
        }

        state.step += 1;
        let t = state.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let corr1 = 1.0 - b1.powi(t);
        let corr2 = 1.0 - b2.powi(t);
        let (lr, eps, wd) = (self.lr, self.eps, self.weight_decay);

        for (i, layer) in params.layers.iter_mut().enumerate() {
            let (gw, gb) = &grads.layers[i];
            let (mw, mb) = &mut state.m.layers[i];
            let (vw, vb) = &mut state.v.layers[i];
            let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / corr1;
                let v_hat = *v / corr2;
                *p -= lr * (m_hat / (v_hat.sqrt() + eps) + wd * *p);
            };
            ndarray::Zip::from(&mut layer.weight)
                .and(gw)
                .and(mw)
                .and(vw)
                .for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut layer.bias)
                .and(gb)
                .and(mb)
                .and(vb)
                .for_each(|p, &g, m, v| update(p, g, m, v));
        }
        Ok(StepOutcome::Applied)
    }

    /// Updates several stores as one parameter set: a non-finite gradient
    /// in any of them skips all of them.
    pub fn step_all(
        &self,
        params: Vec<&mut ParamStore>,
        grads: &[ParamGrads],
        states: &mut [OptState],
    ) -> Result<StepOutcome> {
        if params.len() != grads.len() || params.len() != states.len() {
            return Err(Error::Shape("stores, gradients and states differ in count".into()));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            for s in states.iter_mut() {
                s.skipped += 1;
            }
            log::warn!("non-finite gradient, skipping joint update");
            return Ok(StepOutcome::Skipped);
        }
        for ((p, g), s) in params.into_iter().zip(grads).zip(states.iter_mut()) {
            self.step(p, g, s)?;
        }
        Ok(StepOutcome::Applied)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnad::{Activation, Layer};
    use crate::Mat;
    use ndarray::{array, Array1};

    fn scalar_store(w: f64) -> ParamStore {
        ParamStore::from_layers(vec![Layer {
            weight: array![[w]],
            bias: Array1::zeros(1),
            activation: Activation::Identity,
        }])
        .unwrap()
    }

    fn scalar_grad(g: f64) -> ParamGrads {
        ParamGrads {
            layers: vec![(array![[g]], Array1::zeros(1))],
        }
    }

    #[test]
    fn first_step_matches_hand_computation() {
        // m̂ = 2, v̂ = 4 after bias correction → Δ = 0.1·2/(2 + 1e-8).
        let mut p = scalar_store(1.0);
        let mut st = OptState::new(&p);
        let opt = AdamW::new(0.1);
        opt.step(&mut p, &scalar_grad(2.0), &mut st).unwrap();
        let expected = 1.0 - 0.1 * 2.0 / (2.0 + 1e-8);
        assert_eq!(p.layers[0].weight[[0, 0]], expected);
        assert_eq!(st.m.layers[0].0[[0, 0]], 2.0);
        assert!((st.v.layers[0].0[[0, 0]] / (1.0 - 0.99) - 4.0).abs() < 1e-12);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_gradient_is_identity() {
        let mut rng = crate::rng::stream(1, "opt");
        let mut p = ParamStore::random(&[3, 5, 2], Activation::Silu, &mut rng);
        let before = p.clone();
        let mut st = OptState::new(&p);
        let opt = AdamW::new(1e-2);
        for _ in 0..5 {
            opt.step(&mut p, &ParamGrads::zeros_like(&before), &mut st).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(st.step, 5);
    }

    #[test]
    fn negated_gradient_negates_update() {
        let opt = AdamW::new(0.03);
        let run = |sign: f64| {
            let mut p = scalar_store(0.0);
            let mut st = OptState::new(&p);
            for g in [0.7, -1.3, 2.2] {
                opt.step(&mut p, &scalar_grad(sign * g), &mut st).unwrap();
            }
            p.layers[0].weight[[0, 0]]
        };
        assert_eq!(run(1.0), -run(-1.0));
    }

    #[test]
    fn non_finite_gradient_skips() {
        let mut p = scalar_store(1.0);
        let mut st = OptState::new(&p);
        let out = AdamW::new(0.1)
            .step(&mut p, &scalar_grad(f64::NAN), &mut st)
            .unwrap();
        assert_eq!(out, StepOutcome::Skipped);
        assert_eq!(p.layers[0].weight[[0, 0]], 1.0);
        assert_eq!((st.step, st.skipped), (0, 1));
    }

    #[test]
    fn bad_rate_and_shapes_are_rejected() {
        let mut p = scalar_store(1.0);
        let mut st = OptState::new(&p);
        assert!(AdamW::new(0.0).step(&mut p, &scalar_grad(1.0), &mut st).is_err());
        let wrong = ParamGrads {
            layers: vec![(Mat::zeros((2, 1)), Array1::zeros(1))],
        };
        assert!(AdamW::new(0.1).step(&mut p, &wrong, &mut st).is_err());
    }
}
