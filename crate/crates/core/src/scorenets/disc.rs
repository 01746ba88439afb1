use rand::Rng;

use super::net::ScoreNet;
use crate::diffcore::Cond;
use crate::nnad::{Activation, Binding, Gradients, ParamGrads, ParamStore, Tape, Var};
use crate::{Error, Mat, Result};

pub const HEAD_WIDTH: usize = 64;

fn make_heads<R: Rng + ?Sized>(widths: &[usize], head_width: usize, rng: &mut R) -> Vec<ParamStore> {
    widths
        .iter()
        .map(|&w| ParamStore::random(&[w, head_width, 1], Activation::Silu, rng))
        .collect()
}

fn heads_forward(heads: &[ParamStore], taps: &[Mat]) -> Result<Mat> {
    let mut acc: Option<Mat> = None;
    for (h, x) in heads.iter().zip(taps) {
        let out = h.forward(x)?;
        acc = Some(match acc {
            None => out,
            Some(a) => a + &out,
        });
    }
    let acc = acc.ok_or_else(|| Error::Config("discriminator without heads".into()))?;
    Ok(acc / heads.len() as f64)
}

fn heads_record(
    tape: &mut Tape,
    heads: &[ParamStore],
    taps: &[Var],
    trainable: bool,
) -> Result<(Var, Vec<Binding>)> {
    let mut acc: Option<Var> = None;
    let mut bindings = Vec::with_capacity(heads.len());
    for (h, &x) in heads.iter().zip(taps) {
        let rec = h.record(tape, x, trainable)?;
        bindings.push(rec.binding);
        acc = Some(match acc {
            None => rec.output,
            Some(a) => tape.add(a, rec.output)?,
        });
    }
    let acc = acc.ok_or_else(|| Error::Config("discriminator without heads".into()))?;
    Ok((tape.scale(acc, 1.0 / heads.len() as f64), bindings))
}

/// Recorded logits and the tape handles of the trainable parameters.
#[derive(Clone, Debug)]
pub struct CriticRecord {
    /// `n × 1` logits.
    pub logits: Var,
    pub bindings: Vec<Binding>,
}

/// Shared surface of both discriminator kinds, used by the adversarial
/// trainers.
pub trait Critic {
    fn logits(&self, x: &Mat, t: &[f64], cond: Cond<'_>) -> Result<Mat>;
    fn record(
        &self,
        tape: &mut Tape,
        x: Var,
        t: &[f64],
        cond: Cond<'_>,
        trainable: bool,
    ) -> Result<CriticRecord>;
    fn trainable(&self) -> Vec<&ParamStore>;
    fn trainable_mut(&mut self) -> Vec<&mut ParamStore>;

    /// Gradients of every trainable store, summed over `records`.
    fn grads(&self, records: &[&CriticRecord], g: &Gradients) -> Vec<ParamGrads> {
        let stores = self.trainable();
        let mut out: Vec<ParamGrads> = stores.iter().map(|s| ParamGrads::zeros_like(s)).collect();
        for rec in records {
            for ((acc, b), s) in out.iter_mut().zip(&rec.bindings).zip(&stores) {
                acc.add_assign(&b.grads(s, g));
            }
        }
        out
    }
}

/// Multi-head discriminator over the hidden features of a frozen copy of
/// the teacher.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub backbone: ScoreNet,
    pub heads: Vec<ParamStore>,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(teacher: &ScoreNet, head_width: usize, rng: &mut R) -> Self {
        let widths: Vec<usize> = teacher.config.hidden.clone();
        Self {
            backbone: teacher.clone(),
            heads: make_heads(&widths, head_width, rng),
        }
    }

    pub fn zero_heads(&mut self) {
        for h in &mut self.heads {
            for l in &mut h.layers {
                l.weight.fill(0.0);
                l.bias.fill(0.0);
            }
        }
    }

    pub fn backbone_digest(&self) -> String {
        self.backbone.params.digest()
    }
}

impl Critic for Discriminator {
    fn logits(&self, x: &Mat, t: &[f64], cond: Cond<'_>) -> Result<Mat> {
        let (_, hidden) = self.backbone.predict_hidden(x, t, cond)?;
        heads_forward(&self.heads, &hidden)
    }

    fn record(
        &self,
        tape: &mut Tape,
        x: Var,
        t: &[f64],
        cond: Cond<'_>,
        trainable: bool,
    ) -> Result<CriticRecord> {
        let rec = self.backbone.record(tape, x, t, cond, false)?;
        let (logits, bindings) = heads_record(tape, &self.heads, &rec.hidden, trainable)?;
        Ok(CriticRecord { logits, bindings })
    }

    fn trainable(&self) -> Vec<&ParamStore> {
        self.heads.iter().collect()
    }

    fn trainable_mut(&mut self) -> Vec<&mut ParamStore> {
        self.heads.iter_mut().collect()
    }
}

/// Trainable discriminator on clean data coordinates. Every trunk layer
/// is a tap; times and labels are ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct DataSpaceDiscriminator {
    pub trunk: ParamStore,
    pub heads: Vec<ParamStore>,
}

impl DataSpaceDiscriminator {
    pub fn new<R: Rng + ?Sized>(data_dim: usize, hidden: &[usize], head_width: usize, rng: &mut R) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::Config("data-space discriminator needs a hidden layer".into()));
        }
        let mut dims = vec![data_dim];
        dims.extend(hidden);
        let mut trunk = ParamStore::random(&dims, Activation::Silu, rng);
        trunk.layers.last_mut().unwrap().activation = Activation::Silu;
        Ok(Self {
            trunk,
            heads: make_heads(hidden, head_width, rng),
        })
    }

    pub fn zero_heads(&mut self) {
        for h in &mut self.heads {
            for l in &mut h.layers {
                l.weight.fill(0.0);
                l.bias.fill(0.0);
            }
        }
    }
}

impl Critic for DataSpaceDiscriminator {
    fn logits(&self, x: &Mat, _t: &[f64], _cond: Cond<'_>) -> Result<Mat> {
        let (out, mut hidden) = self.trunk.forward_hidden(x)?;
        hidden.push(out);
        heads_forward(&self.heads, &hidden)
    }

    fn record(
        &self,
        tape: &mut Tape,
        x: Var,
        _t: &[f64],
        _cond: Cond<'_>,
        trainable: bool,
    ) -> Result<CriticRecord> {
        let rec = self.trunk.record(tape, x, trainable)?;
        let mut taps = rec.hidden.clone();
        taps.push(rec.output);
        let (logits, mut bindings) = heads_record(tape, &self.heads, &taps, trainable)?;
        bindings.insert(0, rec.binding);
        Ok(CriticRecord { logits, bindings })
    }

    fn trainable(&self) -> Vec<&ParamStore> {
        std::iter::once(&self.trunk).chain(&self.heads).collect()
    }

    fn trainable_mut(&mut self) -> Vec<&mut ParamStore> {
        std::iter::once(&mut self.trunk).chain(self.heads.iter_mut()).collect()
    }
}
