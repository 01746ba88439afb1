use ndarray::Axis;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{row_times, Cond, NoiseModel, VelocityModel, NULL_CLASS};
use crate::nnad::{embed_times, Activation, ParamStore, Recorded, Tape, Var, DEFAULT_TEMB_DIM};
use crate::{Error, Mat, Result};

/// Network architecture shared by every score role.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub data_dim: usize,
    pub hidden: Vec<usize>,
    pub temb_dim: usize,
    /// Number of classes; the one-hot input carries one extra null slot.
    pub num_classes: Option<usize>,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            data_dim: 2,
            hidden: vec![128; 4],
            temb_dim: DEFAULT_TEMB_DIM,
            num_classes: None,
        }
    }
}

impl NetConfig {
    pub fn class_slots(&self) -> usize {
        self.num_classes.map_or(0, |k| k + 1)
    }

    pub fn input_dim(&self) -> usize {
        self.data_dim + self.temb_dim + self.class_slots()
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(&self.hidden);
        d.push(self.data_dim);
        d
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    Velocity,
    Noise,
}

/// Dense score network over `concat(x, time_embed(t), one_hot(class))`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreNet {
    pub params: ParamStore,
    pub config: NetConfig,
    pub parameterization: Parameterization,
    pub horizon: f64,
}

impl ScoreNet {
    pub fn new<R: Rng + ?Sized>(
        config: NetConfig,
        parameterization: Parameterization,
        horizon: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if config.temb_dim % 2 != 0 {
            return Err(Error::Config("temb_dim must be even".into()));
        }
        let params = ParamStore::random(&config.dims(), Activation::Silu, rng);
        Ok(Self {
            params,
            config,
            parameterization,
            horizon,
        })
    }

    /// Wraps loaded parameters, checking them against `config`.
    pub fn from_params(
        params: ParamStore,
        config: NetConfig,
        parameterization: Parameterization,
        horizon: f64,
    ) -> Result<Self> {
        let dims = config.dims();
        let mut actual = vec![params.input_dim()];
        actual.extend(params.layers.iter().map(|l| l.out_dim()));
        if actual != dims {
            return Err(Error::Config(format!(
                "parameters have widths {actual:?}, config expects {dims:?}"
            )));
        }
        Ok(Self {
            params,
            config,
            parameterization,
            horizon,
        })
    }

    pub fn is_conditional(&self) -> bool {
        self.config.num_classes.is_some()
    }

    /// Time embedding and one-hot class columns for `rows` inputs.
    pub fn conditioning(&self, rows: usize, t: &[f64], cond: Cond<'_>) -> Result<Mat> {
        let ts = row_times(t, rows)?;
        for &ti in &ts {
            if !(0.0..=self.horizon).contains(&ti) {
                return Err(Error::Rejected(format!("time {ti} outside [0, {}]", self.horizon)));
            }
        }
        cond.check_rows(rows)?;
        let temb = embed_times(&ts, self.config.temb_dim, self.horizon)?;
        let Some(k) = self.config.num_classes else {
            if let Cond::Labels(l) = cond {
                if l.iter().any(|&c| c != NULL_CLASS) {
                    return Err(Error::Rejected("class labels given to an unconditional network".into()));
                }
            }
            return Ok(temb);
        };
        let mut onehot = Mat::zeros((rows, k + 1));
        for i in 0..rows {
            let c = cond.label(i);
            let slot = if c == NULL_CLASS { k } else { c };
            if slot > k {
                return Err(Error::Rejected(format!("label {c} ≥ class count {k}")));
            }
            onehot[[i, slot]] = 1.0;
        }
        Ok(ndarray::concatenate(Axis(1), &[temb.view(), onehot.view()]).expect("same rows"))
    }

    fn check_x(&self, x: &Mat) -> Result<()> {
        if x.ncols() != self.config.data_dim {
            return Err(Error::Shape(format!(
                "network of data dim {} given {} columns",
                self.config.data_dim,
                x.ncols()
            )));
        }
        Ok(())
    }

    pub fn predict(&self, x: &Mat, t: &[f64], cond: Cond<'_>) -> Result<Mat> {
        Ok(self.predict_hidden(x, t, cond)?.0)
    }

    /// Output plus post-activation hidden features.
    pub fn predict_hidden(&self, x: &Mat, t: &[f64], cond: Cond<'_>) -> Result<(Mat, Vec<Mat>)> {
        self.check_x(x)?;
        let c = self.conditioning(x.nrows(), t, cond)?;
        let input = ndarray::concatenate(Axis(1), &[x.view(), c.view()]).expect("same rows");
        self.params.forward_hidden(&input)
    }

    /// Records the network on `tape` with `x` as a (possibly differentiable)
    /// input.
    pub fn record(
        &self,
        tape: &mut Tape,
        x: Var,
        t: &[f64],
        cond: Cond<'_>,
        trainable: bool,
    ) -> Result<Recorded> {
        self.check_x(tape.value(x))?;
        let rows = tape.value(x).nrows();
        let c = tape.constant(self.conditioning(rows, t, cond)?);
        let input = tape.concat_cols(&[x, c])?;
        self.params.record(tape, input, trainable)
    }

    /// Classifier-free guided velocity `v_u + w (v_c − v_u)` with one scale
    /// per row (or one shared scale).
    pub fn cfg_velocity(&self, x: &Mat, t: &[f64], labels: &[usize], w: &[f64]) -> Result<Mat> {
        if !self.is_conditional() {
            return Err(Error::Config("guidance needs a network trained with a null class".into()));
        }
        if self.parameterization != Parameterization::Velocity {
            return Err(Error::Rejected("guidance here combines velocity outputs".into()));
        }
        let ws = row_times(w, x.nrows())?;
        if ws.iter().any(|&s| !(s >= 0.0)) {
            return Err(Error::Rejected("guidance scale must be ≥ 0".into()));
        }
        let v_c = self.predict(x, t, Cond::Labels(labels))?;
        let v_u = self.predict(x, t, Cond::Null)?;
        let mut out = v_u.clone();
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            let (c, u) = (v_c.row(i), v_u.row(i));
            for j in 0..row.len() {
                row[j] = u[j] + ws[i] * (c[j] - u[j]);
            }
        }
        Ok(out)
    }
}

impl VelocityModel for ScoreNet {
    fn velocity(&self, x: &Mat, t: &[f64], cond: Cond<'_>) -> Result<Mat> {
        if self.parameterization != Parameterization::Velocity {
            return Err(Error::Rejected("noise-parameterised network used as a velocity model".into()));
        }
        self.predict(x, t, cond)
    }
}

impl NoiseModel for ScoreNet {
    fn noise(&self, x: &Mat, t: &[f64], cond: Cond<'_>) -> Result<Mat> {
        if self.parameterization != Parameterization::Noise {
            return Err(Error::Rejected("velocity-parameterised network used as a noise model".into()));
        }
        self.predict(x, t, cond)
    }
}

/// Deep copy used to initialise the fake estimator, generator and
/// discriminator backbone from the teacher.
pub fn clone_params(src: &ScoreNet) -> ScoreNet {
    src.clone()
}
