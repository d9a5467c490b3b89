//! Vicinal training samples and smoothed training signals.
//!
//! Mixup draws a mixing weight from a symmetric Beta distribution and forms
//! convex combinations of a batch with a permutation of itself, on both the
//! features and the one-hot labels:
//!
//! ```text
//! x~ = lambda * x_i + (1 - lambda) * x_j
//! y~ = lambda * y_i + (1 - lambda) * y_j
//! ```
//!
//! Variants here: feature-only mixing (the mixed image keeps the hard label
//! of the nearer parent), manifold mixing (hidden-layer activations combined
//! during the forward pass), epsilon label smoothing, and an
//! entropy-regularized loss that penalizes low-entropy predictions. The
//! label-entropy distribution of mixed targets is exposed for analysis.

use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};
use crate::nn::{self, ForwardPass, MixAt, MlpModel, Mode};
use crate::tape::{self, NodeId, Tape};
use crate::tensor::Tensor;

/// Which mixing scheme a training run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixKind {
    None,
    Mixup,
    FeatureOnlyMixup,
    ManifoldMixup,
}

/// Mixing policy: the scheme, the Beta concentration, and (for manifold
/// mixing) which layers are eligible (0 = input).
#[derive(Debug, Clone)]
pub struct MixPolicy {
    pub kind: MixKind,
    pub alpha: f64,
    pub eligible_layers: Vec<usize>,
    /// Draw one lambda per sample instead of one per batch. Off by default.
    pub per_sample_lambda: bool,
}

impl MixPolicy {
    pub fn none() -> Self {
        MixPolicy {
            kind: MixKind::None,
            alpha: 0.0,
            eligible_layers: Vec::new(),
            per_sample_lambda: false,
        }
    }

    pub fn mixup(alpha: f64) -> Self {
        MixPolicy {
            kind: MixKind::Mixup,
            alpha,
            eligible_layers: Vec::new(),
            per_sample_lambda: false,
        }
    }

    pub fn validate(&self, model_layers: usize) -> Result<()> {
        if self.alpha < 0.0 {
            return Err(Error::validation(format!(
                "alpha must be nonnegative, got {}",
                self.alpha
            )));
        }
        if self.kind == MixKind::ManifoldMixup {
            if self.eligible_layers.is_empty() {
                return Err(Error::validation(
                    "manifold mixup needs a nonempty set of eligible layers",
                ));
            }
            if let Some(&bad) = self.eligible_layers.iter().find(|&&l| l >= model_layers) {
                return Err(Error::validation(format!(
                    "eligible layer {bad} out of range for a model with {model_layers} layers"
                )));
            }
        }
        Ok(())
    }
}

/// Alternative smoothed training signals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SmoothingPolicy {
    None,
    /// `1 - epsilon` on the true class, `epsilon / (K-1)` on each other.
    Epsilon(f64),
    /// Cross-entropy minus `kappa` times the mean prediction entropy.
    Erl(f64),
}

impl SmoothingPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SmoothingPolicy::None => Ok(()),
            SmoothingPolicy::Epsilon(e) if !(0.0..1.0).contains(&e) => Err(Error::validation(
                format!("epsilon must be in [0,1), got {e}"),
            )),
            SmoothingPolicy::Erl(k) if k < 0.0 => Err(Error::validation(format!(
                "erl coefficient must be nonnegative, got {k}"
            ))),
            _ => Ok(()),
        }
    }
}

/// A batch of soft labels: every row is a probability distribution
/// (nonnegative, sums to 1 within 1e-9).
#[derive(Debug, Clone)]
pub struct SoftLabelBatch(Tensor);

impl SoftLabelBatch {
    pub fn new(rows: Tensor) -> Result<Self> {
        tape::validate_distribution_rows(&rows, "soft label")?;
        Ok(SoftLabelBatch(rows))
    }

    /// One-hot rows from hard class indices.
    pub fn from_hard(labels: &[usize], n_classes: usize) -> Result<Self> {
        let mut data = vec![0.0; labels.len() * n_classes];
        for (i, &l) in labels.iter().enumerate() {
            if l >= n_classes {
                return Err(Error::validation(format!(
                    "class {l} out of range for {n_classes} classes"
                )));
            }
            data[i * n_classes + l] = 1.0;
        }
        Ok(SoftLabelBatch(Tensor::new(
            vec![labels.len(), n_classes],
            data,
        )?))
    }

    /// Epsilon-smoothed rows from hard class indices.
    pub fn from_epsilon(labels: &[usize], epsilon: f64, n_classes: usize) -> Result<Self> {
        let rows: Result<Vec<Vec<f64>>> = labels
            .iter()
            .map(|&l| epsilon_smooth(l, epsilon, n_classes))
            .collect();
        Ok(SoftLabelBatch(Tensor::from_rows(&rows?)?))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.rows() == 0
    }
}

/// Draw the mixing weight: `Beta(alpha, alpha)` for positive alpha; for
/// `alpha = 0` the limit convention is a fair coin over `{0, 1}`, which
/// recovers unmixed training.
pub fn sample_lambda(alpha: f64, rng: &mut impl Rng) -> Result<f64> {
    if alpha < 0.0 {
        return Err(Error::validation(format!(
            "alpha must be nonnegative, got {alpha}"
        )));
    }
    if alpha == 0.0 {
        return Ok(if rng.random::<f64>() < 0.5 { 0.0 } else { 1.0 });
    }
    let beta = Beta::new(alpha, alpha)
        .map_err(|e| Error::validation(format!("Beta({alpha},{alpha}): {e}")))?;
    Ok(beta.sample(rng))
}

/// Mix a batch with a permutation of itself: features and soft labels are
/// combined with the same weight, so mixed labels remain distributions.
pub fn mixup_batch(
    x: &Tensor,
    y: &SoftLabelBatch,
    perm: &[usize],
    lambda: f64,
) -> Result<(Tensor, SoftLabelBatch)> {
    if x.rows() != y.len() {
        return Err(Error::dimension(format!(
            "{} feature rows but {} label rows",
            x.rows(),
            y.len()
        )));
    }
    let xm = x.mix_rows(perm, lambda)?;
    let ym = y.tensor().mix_rows(perm, lambda)?;
    Ok((xm, SoftLabelBatch::new(ym)?))
}

/// Per-sample variant of [`mixup_batch`]: one mixing weight per row.
pub fn mixup_batch_per_sample(
    x: &Tensor,
    y: &SoftLabelBatch,
    perm: &[usize],
    lambdas: &[f64],
) -> Result<(Tensor, SoftLabelBatch)> {
    if x.rows() != y.len() {
        return Err(Error::dimension(format!(
            "{} feature rows but {} label rows",
            x.rows(),
            y.len()
        )));
    }
    let xm = x.mix_rows_per_sample(perm, lambdas)?;
    let ym = y.tensor().mix_rows_per_sample(perm, lambdas)?;
    Ok((xm, SoftLabelBatch::new(ym)?))
}

/// Feature-only mixing: features are combined as in [`mixup_batch`] but each
/// sample keeps the hard label of the nearer parent (ties at `lambda = 0.5`
/// resolve to the first parent). The resulting labels have zero entropy.
pub fn feature_only_mixup_batch(
    x: &Tensor,
    y_hard: &[usize],
    perm: &[usize],
    lambda: f64,
) -> Result<(Tensor, Vec<usize>)> {
    if x.rows() != y_hard.len() {
        return Err(Error::dimension(format!(
            "{} feature rows but {} labels",
            x.rows(),
            y_hard.len()
        )));
    }
    let xm = x.mix_rows(perm, lambda)?;
    let labels = y_hard
        .iter()
        .enumerate()
        .map(|(i, &yi)| if lambda >= 0.5 { yi } else { y_hard[perm[i]] })
        .collect();
    Ok((xm, labels))
}

/// Forward pass with the convex combination applied to the activations
/// entering `layer_k` (0 = raw input). The tape supports backward through the
/// mixing: gradient routes to both contributing rows.
pub fn manifold_mix_forward(
    model: &MlpModel,
    x: &Tensor,
    perm: &[usize],
    lambda: f64,
    layer_k: usize,
    mode: Mode,
    rng: Option<&mut impl Rng>,
) -> Result<ForwardPass> {
    let mix = MixAt {
        layer: layer_k,
        perm: perm.to_vec(),
        lambda,
    };
    nn::forward_mixed(model, x, Some(&mix), mode, rng)
}

/// Smoothed target row: probability `1 - epsilon` on the true class and
/// `epsilon / (K-1)` on each other class.
pub fn epsilon_smooth(y_hard: usize, epsilon: f64, n_classes: usize) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(Error::validation(format!(
            "epsilon must be in [0,1), got {epsilon}"
        )));
    }
    if n_classes < 2 {
        return Err(Error::validation(format!(
            "epsilon smoothing needs K >= 2, got {n_classes}"
        )));
    }
    if y_hard >= n_classes {
        return Err(Error::validation(format!(
            "class {y_hard} out of range for {n_classes} classes"
        )));
    }
    let off = epsilon / (n_classes - 1) as f64;
    let mut row = vec![off; n_classes];
    row[y_hard] = 1.0 - epsilon;
    Ok(row)
}

/// Entropy-regularized loss on the tape:
/// `soft_cross_entropy(logits, y) - kappa * mean_row H(softmax(logits))`.
/// `kappa = 0` returns the plain cross-entropy node.
pub fn erl_loss(
    tape: &mut Tape,
    logits: NodeId,
    y: &SoftLabelBatch,
    kappa: f64,
) -> Result<NodeId> {
    if kappa < 0.0 {
        return Err(Error::validation(format!(
            "erl coefficient must be nonnegative, got {kappa}"
        )));
    }
    let ce = tape.soft_cross_entropy(logits, y.tensor())?;
    if kappa == 0.0 {
        return Ok(ce);
    }
    let ent = tape.entropy_penalty(logits)?;
    tape.combine(ce, ent, 1.0, -kappa)
}

/// Plain-value entropy-regularized loss, without a tape.
pub fn erl_loss_value(logits: &Tensor, y: &SoftLabelBatch, kappa: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let z = tape.leaf(logits.clone(), None);
    let loss = erl_loss(&mut tape, z, y, kappa)?;
    tape.scalar(loss)
}

/// Shannon entropy of a probability vector in nats, with `0 ln 0 = 0`.
pub fn label_entropy(dist: &[f64]) -> Result<f64> {
    let mut sum = 0.0;
    for &p in dist {
        if p.is_nan() || p < 0.0 {
            return Err(Error::validation(format!(
                "distribution entry {p} is negative or NaN"
            )));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::validation(format!(
            "distribution sums to {sum}, expected 1 within 1e-9"
        )));
    }
    Ok(dist
        .iter()
        .map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 })
        .sum())
}

/// Histogram of mixed-label entropies, with equal-width bins over
/// `[0, ln 2]` (bin 1 includes 0, last bin right-closed at ln 2).
#[derive(Debug, Clone)]
pub struct EntropyHistogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub mean: f64,
    pub variance: f64,
    pub n_samples: usize,
}

impl EntropyHistogram {
    /// CSV rows `bin_low,bin_high,count` with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_low,bin_high,count\n");
        for (i, &c) in self.counts.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{}\n",
                self.bin_edges[i],
                self.bin_edges[i + 1],
                c
            ));
        }
        out
    }
}

/// Monte Carlo distribution of training-label entropies under mixup.
///
/// Each draw samples `lambda`; with probability `class_collision_prob` the
/// mixed pair shares a class (entropy exactly 0), otherwise the mixed label
/// is `[lambda, 1-lambda]` over two distinct classes with entropy
/// `H(lambda)`.
pub fn entropy_distribution(
    alpha: f64,
    n_samples: usize,
    class_collision_prob: f64,
    n_bins: usize,
    rng: &mut impl Rng,
) -> Result<EntropyHistogram> {
    if n_samples == 0 {
        return Err(Error::validation("need at least one sample"));
    }
    if !(0.0..=1.0).contains(&class_collision_prob) {
        return Err(Error::validation(format!(
            "collision probability must be in [0,1], got {class_collision_prob}"
        )));
    }
    if n_bins == 0 {
        return Err(Error::validation("need at least one histogram bin"));
    }
    let max_h = 2.0_f64.ln();
    let mut counts = vec![0usize; n_bins];
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n_samples {
        let lam = sample_lambda(alpha, rng)?;
        let h = if class_collision_prob > 0.0 && rng.random::<f64>() < class_collision_prob {
            0.0
        } else {
            let mut h = 0.0;
            if lam > 0.0 {
                h -= lam * lam.ln();
            }
            if lam < 1.0 {
                h -= (1.0 - lam) * (1.0 - lam).ln();
            }
            h
        };
        sum += h;
        sum_sq += h * h;
        // Right-closed bins over [0, ln 2]; bin 0 includes 0.
        let mut bin = (h / max_h * n_bins as f64).ceil() as usize;
        bin = bin.clamp(1, n_bins);
        counts[bin - 1] += 1;
    }
    let mean = sum / n_samples as f64;
    let variance = (sum_sq / n_samples as f64 - mean * mean).max(0.0);
    let bin_edges = (0..=n_bins)
        .map(|i| max_h * i as f64 / n_bins as f64)
        .collect();
    Ok(EntropyHistogram {
        bin_edges,
        counts,
        mean,
        variance,
        n_samples,
    })
}
