//! Calibration laboratory for mixup-trained dense classifiers.
//!
//! Trains small MLPs with mixup and related label-smoothing methods on a
//! minimal reverse-mode autodiff core, and measures calibration (ECE, OE,
//! reliability data), post-hoc temperature scaling, MC-dropout predictive
//! uncertainty, and out-of-distribution behavior (matched-moments Gaussian
//! noise, AUROC, convex-hull perturbation sweeps).
//!
//! Modules:
//! - [`tensor`], [`tape`], [`nn`], [`optim`]: dense f64 tensors, the
//!   autodiff tape, the MLP with dropout and soft-label cross-entropy, and
//!   SGD with Nesterov momentum and a step schedule.
//! - [`augment`]: mixup and its feature-only and manifold variants, epsilon
//!   label smoothing, the entropy-regularized loss, and label-entropy
//!   analysis.
//! - [`calibrate`]: interval-bin calibration metrics, per-epoch tracking,
//!   temperature scaling, MC-dropout averaging.
//! - [`ood`]: Gaussian-noise generation, rank-based AUROC, prediction
//!   entropy, perturbation sweeps.
//! - [`data`]: blob generation, IDX and CSV loading, normalization, splits.
//! - [`experiment`]: config-driven runners tying everything together.
//!
//! Determinism: given one config and seed, training, evaluation, and every
//! emitted file are bitwise reproducible on a platform.

pub mod augment;
pub mod calibrate;
pub mod data;
pub mod error;
pub mod experiment;
pub mod nn;
pub mod ood;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
