use ndarray::{Array1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tape::{Gradients, Tape, Var};
use crate::{Error, Mat, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Silu,
    Tanh,
    Identity,
}

impl Activation {
    pub(crate) fn code(self) -> u32 {
        match self {
            Activation::Identity => 0,
            Activation::Silu => 1,
            Activation::Tanh => 2,
        }
    }

    pub(crate) fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Silu),
            2 => Some(Activation::Tanh),
            _ => None,
        }
    }

    fn apply(self, m: Mat) -> Mat {
        match self {
            Activation::Identity => m,
            Activation::Silu => m.mapv(|z| z * (1.0 / (1.0 + (-z).exp()))),
            Activation::Tanh => m.mapv(f64::tanh),
        }
    }

    fn record(self, tape: &mut Tape, v: Var) -> Var {
        match self {
            Activation::Identity => v,
            Activation::Silu => tape.silu(v),
            Activation::Tanh => tape.tanh(v),
        }
    }
}

/// One dense layer, `y = act(x · Wᵀ + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `out × in`, row-major.
    pub weight: Mat,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    fn bias_row(&self) -> Mat {
        self.bias.view().insert_axis(Axis(0)).to_owned()
    }
}

/// Parameters of a dense network.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    pub layers: Vec<Layer>,
}

/// Per-layer gradients (or optimizer moments) shaped like a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads {
    pub layers: Vec<(Mat, Array1<f64>)>,
}

impl ParamGrads {
    pub fn zeros_like(params: &ParamStore) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| (Mat::zeros(l.weight.dim()), Array1::zeros(l.bias.len())))
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|(w, b)| w.iter().chain(b.iter()).all(|z| z.is_finite()))
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|(w, b)| w.iter().chain(b.iter()).map(|z| z * z).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|(w, b)| w.iter().chain(b.iter()))
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            *w += ow;
            *b += ob;
        }
    }
}

/// Tape handles of a network's parameters, in layer order.
#[derive(Clone, Debug)]
pub struct Binding {
    pub params: Vec<(Var, Var)>,
}

impl Binding {
    /// Collects parameter gradients; parameters off the loss path read as
    /// zero.
    pub fn grads(&self, store: &ParamStore, grads: &Gradients) -> ParamGrads {
        ParamGrads {
            layers: self
                .params
                .iter()
                .zip(&store.layers)
                .map(|(&(w, b), layer)| {
                    let gw = grads
                        .get(w)
                        .cloned()
                        .unwrap_or_else(|| Mat::zeros(layer.weight.dim()));
                    let gb = grads
                        .get(b)
                        .map(|m| m.row(0).to_owned())
                        .unwrap_or_else(|| Array1::zeros(layer.bias.len()));
                    (gw, gb)
                })
                .collect(),
        }
    }
}

/// Output of recording a network forward pass on a tape.
#[derive(Clone, Debug)]
pub struct Recorded {
    pub output: Var,
    /// Post-activation values of every hidden layer.
    pub hidden: Vec<Var>,
    pub binding: Binding,
}

impl ParamStore {
    /// Dense network with `dims[0]` inputs and `dims.last()` outputs.
    /// Hidden layers use `hidden`, the last layer is linear. Entries are
    /// drawn from `U(-1/√in, 1/√in)`.
    pub fn random<R: Rng + ?Sized>(dims: &[usize], hidden: Activation, rng: &mut R) -> Self {
        Self::build(dims, hidden, |fan_in| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            rng.random_range(-bound..bound)
        })
    }

    pub fn zeros(dims: &[usize], hidden: Activation) -> Self {
        Self::build(dims, hidden, |_| 0.0)
    }

    fn build(dims: &[usize], hidden: Activation, mut init: impl FnMut(usize) -> f64) -> Self {
        assert!(dims.len() >= 2, "a network needs an input and an output width");
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (fan_in, fan_out) = (dims[i], dims[i + 1]);
                let weight = Mat::from_shape_simple_fn((fan_out, fan_in), || init(fan_in));
                let bias = Array1::from_shape_simple_fn(fan_out, || init(fan_in));
                let activation = if i + 1 == n {
                    Activation::Identity
                } else {
                    hidden
                };
                Layer {
                    weight,
                    bias,
                    activation,
                }
            })
            .collect();
        Self { layers }
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        let store = Self { layers };
        store.validate()?;
        Ok(store)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Shape("network without layers".into()));
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Shape(format!(
                    "layer {i} emits {} values but layer {} expects {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(Error::Shape(format!("layer {i} bias length")));
            }
            if !l.weight.iter().chain(l.bias.iter()).all(|z| z.is_finite()) {
                return Err(Error::Rejected(format!("layer {i} holds non-finite entries")));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(Layer::out_dim).unwrap_or(0)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    fn check_input(&self, x: &Mat) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        Ok(())
    }

    /// Pure forward pass; bit-identical to the value recorded by
    /// [`ParamStore::record`].
    pub fn forward(&self, x: &Mat) -> Result<Mat> {
        Ok(self.forward_hidden(x)?.0)
    }

    /// Output plus the post-activation value of each hidden layer.
    pub fn forward_hidden(&self, x: &Mat) -> Result<(Mat, Vec<Mat>)> {
        self.check_input(x)?;
        let mut hidden = Vec::with_capacity(self.layers.len().saturating_sub(1));
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let pre = h.dot(&layer.weight.t());
            let pre = &pre + &layer.bias_row();
            h = layer.activation.apply(pre);
            if i + 1 < self.layers.len() {
                hidden.push(h.clone());
            }
        }
        Ok((h, hidden))
    }

    /// Records the forward pass of `x` on `tape`. With `trainable = false`
    /// the parameters are frozen leaves: gradients still flow to `x` but no
    /// parameter receives an entry.
    pub fn record(&self, tape: &mut Tape, x: Var, trainable: bool) -> Result<Recorded> {
        self.check_input(tape.value(x))?;
        let mut params = Vec::with_capacity(self.layers.len());
        let mut hidden = Vec::new();
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let w = tape.leaf(layer.weight.clone(), trainable);
            let b = tape.leaf(layer.bias_row(), trainable);
            params.push((w, b));
            let pre = tape.matmul_t(h, w)?;
            let pre = tape.add_row(pre, b)?;
            h = layer.activation.record(tape, pre);
            if i + 1 < self.layers.len() {
                hidden.push(h);
            }
        }
        Ok(Recorded {
            output: h,
            hidden,
            binding: Binding { params },
        })
    }

    /// Hex SHA-256 of every parameter's bit pattern.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for l in &self.layers {
            h.update((l.out_dim() as u64).to_le_bytes());
            h.update((l.in_dim() as u64).to_le_bytes());
            for z in l.weight.iter().chain(l.bias.iter()) {
                h.update(z.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Single-vector forward pass of `concat(x, temb)`, returning the output,
/// the tape that recorded it and the parameter handles for
/// [`Tape::backward`].
pub fn mlp_forward(
    params: &ParamStore,
    x: &[f64],
    temb: &[f64],
) -> Result<(Vec<f64>, Tape, Binding)> {
    let width = x.len() + temb.len();
    if width != params.input_dim() {
        return Err(Error::Rejected(format!(
            "input width {width} does not match first layer width {}",
            params.input_dim()
        )));
    }
    let input: Vec<f64> = x.iter().chain(temb).copied().collect();
    let mut tape = Tape::new();
    let xv = tape.constant(Mat::from_shape_vec((1, width), input).expect("sized above"));
    let rec = params.record(&mut tape, xv, true)?;
    let y = tape.value(rec.output).row(0).to_vec();
    Ok((y, tape, rec.binding))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use ndarray::array;

    #[test]
    fn identity_single_layer() {
        let store = ParamStore::from_layers(vec![Layer {
            weight: Mat::eye(2),
            bias: Array1::zeros(2),
            activation: Activation::Identity,
        }])
        .unwrap();
        let (y, _, _) = mlp_forward(&store, &[1.0, 2.0], &[]).unwrap();
        assert_eq!(y, vec![1.0, 2.0]);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let store = ParamStore::zeros(&[3, 8, 2], Activation::Silu);
        let (y, _, _) = mlp_forward(&store, &[0.3, -5.0], &[7.0]).unwrap();
        assert_eq!(y, vec![0.0, 0.0]);
    }

    #[test]
    fn hand_evaluated_two_layer_net() {
        // Hidden: W1 = [[1, 2], [-1, 0.5]], b1 = [0.5, 0], tanh.
        // Output: W2 = [[2, -1]], b2 = [0.25].
        // x = (1, 0): pre1 = (1.5, -1), h = (tanh 1.5, tanh -1)
        // y = 2·tanh(1.5) + tanh(1) + 0.25, evaluated by hand below.
        let store = ParamStore::from_layers(vec![
            Layer {
                weight: array![[1.0, 2.0], [-1.0, 0.5]],
                bias: array![0.5, 0.0],
                activation: Activation::Tanh,
            },
            Layer {
                weight: array![[2.0, -1.0]],
                bias: array![0.25],
                activation: Activation::Identity,
            },
        ])
        .unwrap();
        let (y, _, _) = mlp_forward(&store, &[1.0, 0.0], &[]).unwrap();
        // tanh(1.5) = 0.905148253644866, tanh(1) = 0.761594155955765
        let expected = 2.0 * 0.905148253644866 + 0.761594155955765 + 0.25;
        assert!((y[0] - expected).abs() < 1e-14, "{} vs {expected}", y[0]);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let store = ParamStore::zeros(&[3, 2], Activation::Silu);
        assert!(matches!(
            mlp_forward(&store, &[1.0, 2.0], &[]),
            Err(Error::Rejected(_))
        ));
        assert!(store.forward(&Mat::zeros((4, 2))).is_err());
    }

    #[test]
    fn broken_chain_is_rejected() {
        let layers = vec![
            Layer {
                weight: Mat::zeros((4, 2)),
                bias: Array1::zeros(4),
                activation: Activation::Silu,
            },
            Layer {
                weight: Mat::zeros((1, 3)),
                bias: Array1::zeros(1),
                activation: Activation::Identity,
            },
        ];
        assert!(ParamStore::from_layers(layers).is_err());
    }

    #[test]
    fn pure_and_recorded_forward_agree_bitwise() {
        let mut rng = stream(3, "test");
        let store = ParamStore::random(&[5, 16, 16, 3], Activation::Silu, &mut rng);
        let x = crate::rng::normal_mat(&mut rng, 7, 5);
        let pure = store.forward(&x).unwrap();
        let again = store.forward(&x).unwrap();
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let rec = store.record(&mut tape, xv, true).unwrap();
        assert_eq!(&pure, tape.value(rec.output));
        assert_eq!(pure, again);
    }

    #[test]
    fn digest_tracks_every_bit() {
        let mut rng = stream(4, "test");
        let mut store = ParamStore::random(&[2, 4, 1], Activation::Silu, &mut rng);
        let before = store.digest();
        store.layers[1].bias[0] = f64::from_bits(store.layers[1].bias[0].to_bits() ^ 1);
        assert_ne!(before, store.digest());
    }
}
