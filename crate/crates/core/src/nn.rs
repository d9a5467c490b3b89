//! Dense multilayer perceptron with rectified-linear hidden layers, inverted
//! dropout, soft-label cross-entropy, and tape-recorded forward passes.
//!
//! The final layer always emits raw logits. Hidden layers apply
//! linear -> relu -> dropout (dropout only in train mode). A forward pass in
//! train mode records every operation on a [`Tape`] so gradients come from a
//! single reverse sweep.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{self, NodeId, ParamId, ParamKind, Tape};
use crate::tensor::{validate_permutation, Tensor};

/// Forward-pass mode. Dropout is active only in `Train`; `Eval` forward is the
/// deterministic identity-dropout network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Fully-connected classifier: `layer_sizes` = input dim, hidden dims..., K.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpModel {
    layer_sizes: Vec<usize>,
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
    dropout_rate: f64,
}

impl MlpModel {
    /// Zero-initialized model. Mostly useful in tests; see
    /// [`MlpModel::init_seeded`] for training.
    pub fn zeros(layer_sizes: Vec<usize>, dropout_rate: f64) -> Result<Self> {
        Self::validate_spec(&layer_sizes, dropout_rate)?;
        let weights = (0..layer_sizes.len() - 1)
            .map(|l| Tensor::zeros(vec![layer_sizes[l], layer_sizes[l + 1]]))
            .collect();
        let biases = (0..layer_sizes.len() - 1)
            .map(|l| Tensor::zeros(vec![layer_sizes[l + 1]]))
            .collect();
        Ok(MlpModel {
            layer_sizes,
            weights,
            biases,
            dropout_rate,
        })
    }

    /// Glorot-uniform initialization: each layer's weights are drawn from
    /// `U(-b, b)` with `b = sqrt(6 / (fan_in + fan_out))`; biases start at 0.
    pub fn init_seeded(layer_sizes: Vec<usize>, dropout_rate: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with_rng(layer_sizes, dropout_rate, &mut rng)
    }

    pub fn init_with_rng(
        layer_sizes: Vec<usize>,
        dropout_rate: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut model = Self::zeros(layer_sizes, dropout_rate)?;
        for l in 0..model.weights.len() {
            let fan_in = model.layer_sizes[l] as f64;
            let fan_out = model.layer_sizes[l + 1] as f64;
            let bound = (6.0 / (fan_in + fan_out)).sqrt();
            for w in model.weights[l].data_mut() {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(model)
    }

    fn validate_spec(layer_sizes: &[usize], dropout_rate: f64) -> Result<()> {
        if layer_sizes.len() < 2 {
            return Err(Error::validation(format!(
                "a model needs at least input and output sizes, got {layer_sizes:?}"
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::validation(format!(
                "layer sizes must be positive, got {layer_sizes:?}"
            )));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::validation(format!(
                "dropout rate must be in [0,1), got {dropout_rate}"
            )));
        }
        Ok(())
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    /// Number of weight layers (hidden layers + output layer).
    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    /// Class count K.
    pub fn n_classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn weight(&self, layer: usize) -> &Tensor {
        &self.weights[layer]
    }

    pub fn bias(&self, layer: usize) -> &Tensor {
        &self.biases[layer]
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut Tensor {
        &mut self.weights[layer]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut Tensor {
        &mut self.biases[layer]
    }

    /// Deterministic eval-mode logits (dropout is the identity). This is the
    /// path every metric uses.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut a = x.clone();
        for l in 0..self.n_layers() {
            let mut z = a.matmul(&self.weights[l])?;
            {
                let n = z.cols();
                let b = self.biases[l].data();
                let zd = z.data_mut();
                for i in 0..zd.len() {
                    zd[i] += b[i % n];
                }
            }
            if l + 1 < self.n_layers() {
                for v in z.data_mut() {
                    *v = v.max(0.0);
                }
            }
            a = z;
        }
        a.check_finite("logits")?;
        Ok(a)
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if !x.is_matrix() || x.cols() != self.input_dim() {
            return Err(Error::dimension(format!(
                "input shape {:?} does not match model input dim {}",
                x.shape(),
                self.input_dim()
            )));
        }
        x.check_finite("input")
    }
}

/// Hidden-layer mixing request for a forward pass: mix activations entering
/// layer `layer` (0 = raw input) with the batch permutation and weight.
#[derive(Debug, Clone)]
pub struct MixAt {
    pub layer: usize,
    pub perm: Vec<usize>,
    pub lambda: f64,
}

/// A recorded forward pass: the tape plus the logits node.
pub struct ForwardPass {
    pub tape: Tape,
    pub logits: NodeId,
}

impl ForwardPass {
    pub fn logits_tensor(&self) -> &Tensor {
        self.tape.value(self.logits)
    }
}

/// Run the network over a batch, recording on a fresh tape.
///
/// In `Train` mode with a positive dropout rate an `rng` is required; in
/// `Eval` mode dropout is skipped entirely so the logits equal
/// [`MlpModel::predict`] bit-for-bit.
pub fn forward(
    model: &MlpModel,
    x: &Tensor,
    mode: Mode,
    rng: Option<&mut impl Rng>,
) -> Result<ForwardPass> {
    forward_mixed(model, x, None, mode, rng)
}

/// Forward pass with an optional hidden-layer mix inserted before layer
/// `mix.layer`. `mix.layer == 0` mixes the raw input, which makes the result
/// agree with mixing the batch before calling [`forward`].
pub fn forward_mixed(
    model: &MlpModel,
    x: &Tensor,
    mix: Option<&MixAt>,
    mode: Mode,
    mut rng: Option<&mut impl Rng>,
) -> Result<ForwardPass> {
    model.check_input(x)?;
    if let Some(m) = mix {
        if m.layer >= model.n_layers() {
            return Err(Error::usage(format!(
                "mix layer {} out of range for a model with {} layers",
                m.layer,
                model.n_layers()
            )));
        }
        validate_permutation(&m.perm, x.rows())?;
    }
    let use_dropout = mode == Mode::Train && model.dropout_rate() > 0.0;
    if use_dropout && rng.is_none() {
        return Err(Error::usage(
            "train-mode forward with dropout requires an rng",
        ));
    }

    let mut tape = Tape::new();
    let mut a = tape.leaf(x.clone(), None);
    for l in 0..model.n_layers() {
        if let Some(m) = mix {
            if m.layer == l {
                a = tape.mix_rows(a, m.perm.clone(), m.lambda)?;
            }
        }
        let w = tape.leaf(
            model.weight(l).clone(),
            Some(ParamId {
                layer: l,
                kind: ParamKind::Weight,
            }),
        );
        let b = tape.leaf(
            model.bias(l).clone(),
            Some(ParamId {
                layer: l,
                kind: ParamKind::Bias,
            }),
        );
        let z = tape.matmul(a, w)?;
        let z = tape.add_row(z, b)?;
        if l + 1 < model.n_layers() {
            a = tape.relu(z)?;
            if use_dropout {
                let r = rng.as_deref_mut().expect("rng checked above");
                a = tape.dropout(a, model.dropout_rate(), r)?;
            }
        } else {
            a = z;
        }
    }
    tape.value(a).check_finite("logits")?;
    Ok(ForwardPass { tape, logits: a })
}

/// Per-parameter gradient tensors, one weight and one bias per layer.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Gradients {
            weights: (0..model.n_layers())
                .map(|l| Tensor::zeros(model.weight(l).shape().to_vec()))
                .collect(),
            biases: (0..model.n_layers())
                .map(|l| Tensor::zeros(model.bias(l).shape().to_vec()))
                .collect(),
        }
    }
}

/// Reverse sweep from `loss`, collected into per-parameter tensors.
/// Parameters the loss never touched get zero gradients.
pub fn backward(model: &MlpModel, tape: &Tape, loss: NodeId) -> Result<Gradients> {
    let node_grads = tape.backward(loss)?;
    let mut out = Gradients::zeros_like(model);
    for (id, grad) in node_grads.into_iter().enumerate() {
        let (Some(param), Some(g)) = (tape.param_of(id), grad) else {
            continue;
        };
        let target = match param.kind {
            ParamKind::Weight => &mut out.weights[param.layer],
            ParamKind::Bias => &mut out.biases[param.layer],
        };
        let td = target.data_mut();
        for (t, v) in td.iter_mut().zip(g.iter()) {
            *t += v;
        }
    }
    Ok(out)
}

/// Row-wise softmax with max subtraction. Rows of the result are nonnegative
/// and sum to 1 within 1e-12.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    if !logits.is_matrix() {
        return Err(Error::dimension(format!(
            "softmax expects [batch,K] logits, got {:?}",
            logits.shape()
        )));
    }
    logits.check_finite("logits")?;
    let (m, k) = (logits.rows(), logits.cols());
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for c in 0..k {
            let e = (row[c] - max).exp();
            out[i * k + c] = e;
            sum += e;
        }
        for c in 0..k {
            out[i * k + c] /= sum;
        }
    }
    Tensor::new(vec![m, k], out)
}

/// Mean soft-label cross-entropy in nats, as a plain value (no tape).
pub fn soft_cross_entropy(logits: &Tensor, soft_labels: &Tensor) -> Result<f64> {
    logits.check_finite("logits")?;
    Ok(tape::soft_ce_parts(logits, soft_labels)?.loss)
}

/// Standalone inverted dropout, matching the tape op: train mode zeroes each
/// element independently with probability `p` and scales survivors by
/// `1/(1-p)`; eval mode is the identity.
pub fn dropout(x: &Tensor, p: f64, mode: Mode, rng: Option<&mut impl Rng>) -> Result<Tensor> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::validation(format!(
            "dropout rate must be in [0,1), got {p}"
        )));
    }
    if mode == Mode::Eval || p == 0.0 {
        return Ok(x.clone());
    }
    let rng = rng.ok_or_else(|| Error::usage("train-mode dropout requires an rng"))?;
    let mask = tape::draw_dropout_mask(x.numel(), p, rng)?;
    let data: Vec<f64> = x
        .data()
        .iter()
        .zip(mask.iter())
        .map(|(&v, &m)| v * m)
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}
