//! Shared helpers for gradient-check oracles.
//!
//! Central finite differences are only a valid oracle away from the ReLU
//! kinks, so harnesses reject model/input draws whose pre-activations come
//! too close to zero.

use mixlab_core::nn::{self, MixAt, MlpModel, Mode};
use mixlab_core::tape::{ParamId, ParamKind};
use mixlab_core::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-5;
/// Minimum |pre-activation| for finite differences to stay on one side of
/// every ReLU kink.
pub const KINK_MARGIN: f64 = 2e-4;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-3)
}

/// Random soft-label targets: each row a random distribution.
pub fn random_soft_targets(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Tensor {
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
        let sum: f64 = raw.iter().sum();
        rows.push(raw.into_iter().map(|v| v / sum).collect::<Vec<f64>>());
    }
    Tensor::from_rows(&rows).unwrap()
}

/// Smallest |pre-activation| over all hidden layers of a (possibly mixed)
/// forward pass, computed by straight matrix arithmetic.
pub fn preactivation_margin(model: &MlpModel, x: &Tensor, mix: Option<&MixAt>) -> f64 {
    let mut margin = f64::INFINITY;
    let mut a = x.clone();
    for l in 0..model.n_layers() {
        if let Some(m) = mix {
            if m.layer == l {
                a = a.mix_rows(&m.perm, m.lambda).unwrap();
            }
        }
        let mut z = a.matmul(model.weight(l)).unwrap();
        let cols = z.cols();
        for (i, v) in z.data_mut().iter_mut().enumerate() {
            *v += model.bias(l).data()[i % cols];
        }
        if l + 1 < model.n_layers() {
            for v in z.data() {
                margin = margin.min(v.abs());
            }
            for v in z.data_mut() {
                *v = v.max(0.0);
            }
        }
        a = z;
    }
    margin
}

/// Loss value of the training composition (optional manifold mix, soft
/// cross-entropy, optional entropy penalty) with dropout disabled, as a pure
/// function of the parameters. Used as the finite-difference functional.
pub fn loss_value(model: &MlpModel, x: &Tensor, targets: &Tensor, mix: Option<&MixAt>, kappa: f64) -> f64 {
    let mut pass =
        nn::forward_mixed(model, x, mix, Mode::Train, None::<&mut ChaCha8Rng>).unwrap();
    let y = mixlab_core::augment::SoftLabelBatch::new(targets.clone()).unwrap();
    let loss = mixlab_core::augment::erl_loss(&mut pass.tape, pass.logits, &y, kappa).unwrap();
    pass.tape.scalar(loss).unwrap()
}

/// Autodiff gradients of the same composition.
pub fn autodiff_gradients(
    model: &MlpModel,
    x: &Tensor,
    targets: &Tensor,
    mix: Option<&MixAt>,
    kappa: f64,
) -> nn::Gradients {
    let mut pass =
        nn::forward_mixed(model, x, mix, Mode::Train, None::<&mut ChaCha8Rng>).unwrap();
    let y = mixlab_core::augment::SoftLabelBatch::new(targets.clone()).unwrap();
    let loss = mixlab_core::augment::erl_loss(&mut pass.tape, pass.logits, &y, kappa).unwrap();
    nn::backward(model, &pass.tape, loss).unwrap()
}

/// Max elementwise relative error between autodiff and central finite
/// differences over every parameter of the model.
pub fn max_gradcheck_error(
    model: &MlpModel,
    x: &Tensor,
    targets: &Tensor,
    mix: Option<&MixAt>,
    kappa: f64,
) -> f64 {
    let grads = autodiff_gradients(model, x, targets, mix, kappa);
    let mut worst: f64 = 0.0;
    for layer in 0..model.n_layers() {
        for kind in [ParamKind::Weight, ParamKind::Bias] {
            let param = ParamId { layer, kind };
            let numel = match kind {
                ParamKind::Weight => model.weight(layer).numel(),
                ParamKind::Bias => model.bias(layer).numel(),
            };
            for i in 0..numel {
                let fd = {
                    let mut plus = model.clone();
                    bump(&mut plus, param, i, FD_STEP);
                    let mut minus = model.clone();
                    bump(&mut minus, param, i, -FD_STEP);
                    (loss_value(&plus, x, targets, mix, kappa)
                        - loss_value(&minus, x, targets, mix, kappa))
                        / (2.0 * FD_STEP)
                };
                let ad = match kind {
                    ParamKind::Weight => grads.weights[layer].data()[i],
                    ParamKind::Bias => grads.biases[layer].data()[i],
                };
                worst = worst.max(rel_err(ad, fd));
            }
        }
    }
    worst
}

fn bump(model: &mut MlpModel, param: ParamId, index: usize, delta: f64) {
    let t = match param.kind {
        ParamKind::Weight => model.weight_mut(param.layer),
        ParamKind::Bias => model.bias_mut(param.layer),
    };
    t.data_mut()[index] += delta;
}
