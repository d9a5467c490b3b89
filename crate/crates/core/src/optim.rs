//! SGD with Nesterov momentum, weight decay, and a step learning-rate
//! schedule.
//!
//! Update rule, per parameter p with gradient g:
//!
//! ```text
//! g' = g + weight_decay * p
//! v  = momentum * v + g'
//! p -= lr * (g' + momentum * v)   (Nesterov)
//! p -= lr * v                     (plain momentum)
//! ```
//!
//! The learning rate at an epoch is the base rate divided by the product of
//! the divisors of every schedule milestone at or before that epoch.

use crate::error::{Error, Result};
use crate::nn::{Gradients, MlpModel};
use crate::tensor::Tensor;

/// Optimizer state: hyperparameters plus one velocity buffer per parameter.
#[derive(Debug, Clone)]
pub struct SgdState {
    pub learning_rate_base: f64,
    pub momentum: f64,
    pub nesterov: bool,
    pub weight_decay: f64,
    /// `(epoch, divisor)` milestones, applied cumulatively.
    pub schedule: Vec<(usize, f64)>,
    velocity_w: Vec<Tensor>,
    velocity_b: Vec<Tensor>,
}

impl SgdState {
    pub fn new(
        model: &MlpModel,
        learning_rate_base: f64,
        momentum: f64,
        nesterov: bool,
        weight_decay: f64,
        schedule: Vec<(usize, f64)>,
    ) -> Result<Self> {
        if learning_rate_base <= 0.0 {
            return Err(Error::validation(format!(
                "base learning rate must be positive, got {learning_rate_base}"
            )));
        }
        if schedule.iter().any(|&(_, d)| d <= 0.0) {
            return Err(Error::validation(
                "schedule divisors must be positive so the learning rate stays positive",
            ));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::validation(format!(
                "momentum must be in [0,1), got {momentum}"
            )));
        }
        if weight_decay < 0.0 {
            return Err(Error::validation(format!(
                "weight decay must be nonnegative, got {weight_decay}"
            )));
        }
        Ok(SgdState {
            learning_rate_base,
            momentum,
            nesterov,
            weight_decay,
            schedule,
            velocity_w: (0..model.n_layers())
                .map(|l| Tensor::zeros(model.weight(l).shape().to_vec()))
                .collect(),
            velocity_b: (0..model.n_layers())
                .map(|l| Tensor::zeros(model.bias(l).shape().to_vec()))
                .collect(),
        })
    }

    /// Learning rate in effect at `epoch`: base / product of divisors of all
    /// milestones with `milestone_epoch <= epoch`.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        let mut lr = self.learning_rate_base;
        for &(at, divisor) in &self.schedule {
            if at <= epoch {
                lr /= divisor;
            }
        }
        lr
    }

    /// One parameter update from a full set of gradients.
    pub fn step(&mut self, model: &mut MlpModel, grads: &Gradients, epoch: usize) -> Result<()> {
        if grads.weights.len() != model.n_layers() {
            return Err(Error::dimension(format!(
                "gradients cover {} layers, model has {}",
                grads.weights.len(),
                model.n_layers()
            )));
        }
        let lr = self.lr_at_epoch(epoch);
        for l in 0..model.n_layers() {
            update_tensor(
                model.weight_mut(l),
                &grads.weights[l],
                &mut self.velocity_w[l],
                lr,
                self.momentum,
                self.nesterov,
                self.weight_decay,
            );
            update_tensor(
                model.bias_mut(l),
                &grads.biases[l],
                &mut self.velocity_b[l],
                lr,
                self.momentum,
                self.nesterov,
                self.weight_decay,
            );
        }
        Ok(())
    }
}

fn update_tensor(
    param: &mut Tensor,
    grad: &Tensor,
    velocity: &mut Tensor,
    lr: f64,
    momentum: f64,
    nesterov: bool,
    weight_decay: f64,
) {
    let p = param.data_mut();
    let g = grad.data();
    let v = velocity.data_mut();
    for i in 0..p.len() {
        let gd = g[i] + weight_decay * p[i];
        v[i] = momentum * v[i] + gd;
        let step = if nesterov { gd + momentum * v[i] } else { v[i] };
        p[i] -= lr * step;
    }
}
