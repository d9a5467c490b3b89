//! Bin-based calibration metrics, temperature scaling, and MC-dropout
//! prediction averaging.
//!
//! Predictions are grouped into M equal-width interval bins by their winning
//! softmax score; bin m covers `((m-1)/M, m/M]` and bin 1 also includes 0.
//! With per-bin accuracy and confidence (mean winning score):
//!
//! ```text
//! ECE = sum_m (|B_m| / n) * |acc(B_m) - conf(B_m)|
//! OE  = sum_m (|B_m| / n) * conf(B_m) * max(conf(B_m) - acc(B_m), 0)
//! ```
//!
//! Empty bins contribute zero. The overconfidence error only penalizes bins
//! whose confidence exceeds their accuracy, weighted by that confidence.

use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{self, MlpModel, Mode};
use crate::tensor::Tensor;

/// Probability floor applied before logs so confident errors stay finite.
pub const NLL_FLOOR: f64 = 1e-12;

/// Default temperature search interval.
pub const TEMPERATURE_BOUNDS: (f64, f64) = (0.05, 10.0);

/// One interval bin of the calibration partition.
#[derive(Debug, Clone, PartialEq)]
pub struct BinStats {
    /// 1-based bin index.
    pub index: usize,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Fraction of correct predictions in the bin; 0 when empty.
    pub accuracy: f64,
    /// Mean winning score in the bin; 0 when empty.
    pub confidence: f64,
}

/// Full calibration summary of a model on a dataset.
#[derive(Debug, Clone)]
pub struct CalibrationReport {
    pub bins: Vec<BinStats>,
    pub ece: f64,
    pub oe: f64,
    pub nll: f64,
    pub accuracy: f64,
    pub mean_winning_score: f64,
    /// Winning-score counts over the same M bins.
    pub winning_score_histogram: Vec<usize>,
    pub n: usize,
}

/// Result of fitting a softmax temperature on a validation set.
#[derive(Debug, Clone)]
pub struct TemperatureFit {
    pub temperature: f64,
    pub bounds: (f64, f64),
    /// Mean validation NLL at the fitted temperature.
    pub nll: f64,
    /// Mean validation NLL at T = 1, for reference.
    pub nll_at_identity: f64,
}

/// Bin index (1-based) of a confidence under the right-closed partition.
fn bin_index(confidence: f64, m_bins: usize) -> usize {
    // Candidate from arithmetic, then exact comparisons against the edges so
    // boundary values land per the definition regardless of rounding.
    let mut m = (confidence * m_bins as f64).ceil() as usize;
    m = m.clamp(1, m_bins);
    while m > 1 && confidence <= (m - 1) as f64 / m_bins as f64 {
        m -= 1;
    }
    while m < m_bins && confidence > m as f64 / m_bins as f64 {
        m += 1;
    }
    m
}

/// Group predictions into M interval bins with per-bin accuracy and mean
/// confidence.
pub fn bin_predictions(
    confidences: &[f64],
    correct: &[bool],
    m_bins: usize,
) -> Result<Vec<BinStats>> {
    if confidences.len() != correct.len() {
        return Err(Error::validation(format!(
            "{} confidences but {} correctness flags",
            confidences.len(),
            correct.len()
        )));
    }
    if m_bins == 0 {
        return Err(Error::validation("need at least one bin"));
    }
    for &c in confidences {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::validation(format!(
                "confidence {c} outside [0,1]"
            )));
        }
    }
    let mut count = vec![0usize; m_bins];
    let mut correct_count = vec![0usize; m_bins];
    let mut conf_sum = vec![0.0; m_bins];
    for (i, &c) in confidences.iter().enumerate() {
        let b = bin_index(c, m_bins) - 1;
        count[b] += 1;
        if correct[i] {
            correct_count[b] += 1;
        }
        conf_sum[b] += c;
    }
    Ok((0..m_bins)
        .map(|b| BinStats {
            index: b + 1,
            lo: b as f64 / m_bins as f64,
            hi: (b + 1) as f64 / m_bins as f64,
            count: count[b],
            accuracy: if count[b] > 0 {
                correct_count[b] as f64 / count[b] as f64
            } else {
                0.0
            },
            confidence: if count[b] > 0 {
                conf_sum[b] / count[b] as f64
            } else {
                0.0
            },
        })
        .collect())
}

/// Expected calibration error from binned statistics.
pub fn ece(bins: &[BinStats], n: usize) -> Result<f64> {
    check_bin_total(bins, n)?;
    Ok(bins
        .iter()
        .map(|b| b.count as f64 / n as f64 * (b.accuracy - b.confidence).abs())
        .sum())
}

/// Overconfidence error from binned statistics.
pub fn oe(bins: &[BinStats], n: usize) -> Result<f64> {
    check_bin_total(bins, n)?;
    Ok(bins
        .iter()
        .map(|b| {
            b.count as f64 / n as f64 * b.confidence * (b.confidence - b.accuracy).max(0.0)
        })
        .sum())
}

fn check_bin_total(bins: &[BinStats], n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::validation(
            "calibration error undefined for an empty sample",
        ));
    }
    let total: usize = bins.iter().map(|b| b.count).sum();
    if total != n {
        return Err(Error::validation(format!(
            "bin counts sum to {total}, expected {n}"
        )));
    }
    Ok(())
}

/// Eval-mode calibration report: winning scores, correctness, bins, ECE, OE,
/// NLL, accuracy, mean winning score, and the winning-score histogram.
pub fn evaluate(model: &MlpModel, dataset: &Dataset, m_bins: usize) -> Result<CalibrationReport> {
    if dataset.is_empty() {
        return Err(Error::validation("cannot evaluate on an empty dataset"));
    }
    let logits = model.predict(dataset.features())?;
    report_from_probs(&nn::softmax(&logits)?, dataset.labels(), m_bins)
}

/// Calibration report from precomputed probabilities (used by the predictor
/// variants as well as plain evaluation).
pub fn report_from_probs(
    probs: &Tensor,
    labels: &[usize],
    m_bins: usize,
) -> Result<CalibrationReport> {
    let n = probs.rows();
    if n == 0 {
        return Err(Error::validation("cannot evaluate an empty batch"));
    }
    if n != labels.len() {
        return Err(Error::validation(format!(
            "{n} probability rows but {} labels",
            labels.len()
        )));
    }
    let mut confidences = Vec::with_capacity(n);
    let mut correct = Vec::with_capacity(n);
    let mut nll_sum = 0.0;
    for i in 0..n {
        let row = probs.row(i);
        let (pred, &score) = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite probabilities"))
            .expect("nonempty row");
        confidences.push(score);
        correct.push(pred == labels[i]);
        nll_sum -= row[labels[i]].max(NLL_FLOOR).ln();
    }
    let bins = bin_predictions(&confidences, &correct, m_bins)?;
    let ece_v = ece(&bins, n)?;
    let oe_v = oe(&bins, n)?;
    let accuracy = correct.iter().filter(|&&c| c).count() as f64 / n as f64;
    let mean_winning_score = confidences.iter().sum::<f64>() / n as f64;
    let winning_score_histogram = bins.iter().map(|b| b.count).collect();
    Ok(CalibrationReport {
        bins,
        ece: ece_v,
        oe: oe_v,
        nll: nll_sum / n as f64,
        accuracy,
        mean_winning_score,
        winning_score_histogram,
        n,
    })
}

impl CalibrationReport {
    /// Stable-key structured text: scalar metrics then the bins table.
    pub fn to_report_string(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("n = {}\n", self.n));
        out.push_str(&format!("bins = {}\n", self.bins.len()));
        out.push_str(&format!("accuracy = {}\n", self.accuracy));
        out.push_str(&format!("mean_winning_score = {}\n", self.mean_winning_score));
        out.push_str(&format!("ece = {}\n", self.ece));
        out.push_str(&format!("oe = {}\n", self.oe));
        out.push_str(&format!("nll = {}\n", self.nll));
        out.push('\n');
        out.push_str(&self.to_reliability_csv());
        out
    }

    /// Reliability-diagram data: `bin_lo,bin_hi,count,acc,conf`.
    pub fn to_reliability_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count,acc,conf\n");
        for b in &self.bins {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                b.lo, b.hi, b.count, b.accuracy, b.confidence
            ));
        }
        out
    }
}

/// One row of the per-epoch tracking series.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub mean_winning_score: f64,
    pub accuracy: f64,
    pub ece: f64,
    pub train_loss: f64,
}

/// Per-epoch confidence/accuracy time series for extended-training plots.
#[derive(Debug, Clone, Default)]
pub struct EpochTracker {
    rows: Vec<EpochRow>,
}

impl EpochTracker {
    pub fn new() -> Self {
        Self::default()
    }

    /// Evaluate the model on the validation set and append one row.
    pub fn track_epoch(
        &mut self,
        model: &MlpModel,
        val: &Dataset,
        epoch: usize,
        m_bins: usize,
        train_loss: f64,
    ) -> Result<&EpochRow> {
        let report = evaluate(model, val, m_bins)?;
        self.rows.push(EpochRow {
            epoch,
            mean_winning_score: report.mean_winning_score,
            accuracy: report.accuracy,
            ece: report.ece,
            train_loss,
        });
        Ok(self.rows.last().expect("just pushed"))
    }

    pub fn rows(&self) -> &[EpochRow] {
        &self.rows
    }

    /// CSV rows `epoch,mean_conf,acc,ece,train_loss` with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,mean_conf,acc,ece,train_loss\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.epoch, r.mean_winning_score, r.accuracy, r.ece, r.train_loss
            ));
        }
        out
    }
}

/// Mean NLL of `softmax(logits / T)` against hard labels.
pub fn nll_at_temperature(logits: &Tensor, labels: &[usize], t: f64) -> Result<f64> {
    if t <= 0.0 {
        return Err(Error::validation(format!(
            "temperature must be positive, got {t}"
        )));
    }
    let probs = apply_temperature(logits, t)?;
    let n = probs.rows();
    let mut sum = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        sum -= probs.row(i)[label].max(NLL_FLOOR).ln();
    }
    Ok(sum / n as f64)
}

/// Fit the softmax temperature minimizing validation NLL over a bounded
/// interval: exhaustive grid at step 0.01 followed by local ternary
/// refinement, clamped to the bounds. Never worse than T = 1 when 1 is
/// inside the bounds.
pub fn fit_temperature(
    val_logits: &Tensor,
    val_labels: &[usize],
    bounds: (f64, f64),
) -> Result<TemperatureFit> {
    if val_logits.rows() == 0 {
        return Err(Error::validation(
            "cannot fit a temperature on an empty set",
        ));
    }
    if val_logits.rows() != val_labels.len() {
        return Err(Error::validation(format!(
            "{} logit rows but {} labels",
            val_logits.rows(),
            val_labels.len()
        )));
    }
    let (lo, hi) = bounds;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::validation(format!(
            "temperature bounds ({lo}, {hi}) must satisfy 0 < lo < hi"
        )));
    }
    if let Some(&bad) = val_labels
        .iter()
        .find(|&&l| l >= val_logits.cols())
    {
        return Err(Error::validation(format!(
            "label {bad} out of range for {} classes",
            val_logits.cols()
        )));
    }

    // Grid in exact hundredths, endpoints included. The small slack keeps
    // rounding of lo*100 from dropping a grid point.
    let lo_i = (lo * 100.0 - 1e-9).ceil() as i64;
    let hi_i = (hi * 100.0 + 1e-9).floor() as i64;
    let mut best_t = lo;
    let mut best_nll = nll_at_temperature(val_logits, val_labels, lo)?;
    let consider = |t: f64, nll: f64, best_t: &mut f64, best_nll: &mut f64| {
        if nll < *best_nll {
            *best_nll = nll;
            *best_t = t;
        }
    };
    for i in lo_i..=hi_i {
        let t = i as f64 / 100.0;
        let nll = nll_at_temperature(val_logits, val_labels, t)?;
        consider(t, nll, &mut best_t, &mut best_nll);
    }
    let nll_hi = nll_at_temperature(val_logits, val_labels, hi)?;
    consider(hi, nll_hi, &mut best_t, &mut best_nll);

    // Ternary refinement inside one grid step of the best point.
    let mut a = (best_t - 0.01).max(lo);
    let mut b = (best_t + 0.01).min(hi);
    for _ in 0..60 {
        let m1 = a + (b - a) / 3.0;
        let m2 = b - (b - a) / 3.0;
        if nll_at_temperature(val_logits, val_labels, m1)?
            <= nll_at_temperature(val_logits, val_labels, m2)?
        {
            b = m2;
        } else {
            a = m1;
        }
    }
    let mid = (0.5 * (a + b)).clamp(lo, hi);
    let nll_mid = nll_at_temperature(val_logits, val_labels, mid)?;
    consider(mid, nll_mid, &mut best_t, &mut best_nll);

    let nll_at_identity = if (lo..=hi).contains(&1.0) {
        let v = nll_at_temperature(val_logits, val_labels, 1.0)?;
        consider(1.0, v, &mut best_t, &mut best_nll);
        v
    } else {
        nll_at_temperature(val_logits, val_labels, 1.0)?
    };

    Ok(TemperatureFit {
        temperature: best_t,
        bounds,
        nll: best_nll,
        nll_at_identity,
    })
}

/// `softmax(logits / T)`. The winning class per row is unchanged for any
/// positive temperature.
pub fn apply_temperature(logits: &Tensor, t: f64) -> Result<Tensor> {
    if t <= 0.0 {
        return Err(Error::validation(format!(
            "temperature must be positive, got {t}"
        )));
    }
    let scaled: Vec<f64> = logits.data().iter().map(|&z| z / t).collect();
    nn::softmax(&Tensor::new(logits.shape().to_vec(), scaled)?)
}

/// Average softmax predictions over `k_passes` train-mode (dropout-enabled)
/// forward passes. With dropout rate 0 this equals the eval-mode prediction.
pub fn mc_dropout_predict(
    model: &MlpModel,
    x: &Tensor,
    k_passes: usize,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    if k_passes == 0 {
        return Err(Error::validation("need at least one dropout pass"));
    }
    let mut acc = Tensor::zeros(vec![x.rows(), model.n_classes()]);
    for _ in 0..k_passes {
        let pass = nn::forward(model, x, Mode::Train, Some(rng))?;
        let probs = nn::softmax(pass.logits_tensor())?;
        let a = acc.data_mut();
        for (v, p) in a.iter_mut().zip(probs.data()) {
            *v += p;
        }
    }
    for v in acc.data_mut() {
        *v /= k_passes as f64;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_blobs;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn hand_fixture_bins() -> Vec<BinStats> {
        bin_predictions(&[0.6, 0.7, 0.8, 0.9], &[true, false, true, true], 4).unwrap()
    }

    #[test]
    fn binning_hand_example() {
        let bins = hand_fixture_bins();
        assert_eq!(bins[2].count, 2);
        assert!((bins[2].accuracy - 0.5).abs() < 1e-15);
        assert!((bins[2].confidence - 0.65).abs() < 1e-15);
        assert_eq!(bins[3].count, 2);
        assert!((bins[3].accuracy - 1.0).abs() < 1e-15);
        assert!((bins[3].confidence - 0.85).abs() < 1e-15);
        assert_eq!(bins[0].count + bins[1].count, 0);
    }

    #[test]
    fn empty_input_gives_empty_bins() {
        let bins = bin_predictions(&[], &[], 5).unwrap();
        for b in &bins {
            assert_eq!(b.count, 0);
            assert_eq!(b.accuracy, 0.0);
            assert_eq!(b.confidence, 0.0);
        }
    }

    #[test]
    fn single_bin_is_overall_stats() {
        let bins = bin_predictions(&[0.2, 0.4, 0.9], &[true, false, true], 1).unwrap();
        assert_eq!(bins.len(), 1);
        assert_eq!(bins[0].count, 3);
        assert!((bins[0].accuracy - 2.0 / 3.0).abs() < 1e-15);
        assert!((bins[0].confidence - 0.5).abs() < 1e-15);
    }

    #[test]
    fn bin_one_includes_zero_and_edges_are_right_closed() {
        let bins = bin_predictions(&[0.0, 0.25, 0.5, 1.0], &[true; 4], 4).unwrap();
        assert_eq!(bins[0].count, 2); // 0.0 and 0.25
        assert_eq!(bins[1].count, 1); // 0.5
        assert_eq!(bins[3].count, 1); // 1.0
    }

    #[test]
    fn ece_and_oe_hand_values() {
        let bins = hand_fixture_bins();
        assert!((ece(&bins, 4).unwrap() - 0.15).abs() < 1e-15);
        assert!((oe(&bins, 4).unwrap() - 0.04875).abs() < 1e-15);
    }

    #[test]
    fn perfectly_calibrated_bins_have_zero_ece() {
        // All confidence 1.0 and all correct.
        let bins = bin_predictions(&[1.0, 1.0], &[true, true], 10).unwrap();
        assert_eq!(ece(&bins, 2).unwrap(), 0.0);
        assert_eq!(oe(&bins, 2).unwrap(), 0.0);
    }

    #[test]
    fn underconfidence_never_counts_toward_oe() {
        // acc >= conf in every occupied bin.
        let bins = bin_predictions(&[0.2, 0.3], &[true, true], 4).unwrap();
        assert_eq!(oe(&bins, 2).unwrap(), 0.0);
        assert!(ece(&bins, 2).unwrap() > 0.0);
    }

    #[test]
    fn maximal_overconfidence_is_one() {
        let bins = bin_predictions(&[1.0, 1.0, 1.0], &[false, false, false], 15).unwrap();
        assert_eq!(oe(&bins, 3).unwrap(), 1.0);
        assert_eq!(ece(&bins, 3).unwrap(), 1.0);
    }

    #[test]
    fn metric_preconditions() {
        let bins = hand_fixture_bins();
        assert!(ece(&bins, 0).is_err());
        assert!(ece(&bins, 5).is_err());
        assert!(bin_predictions(&[0.5], &[], 4).is_err());
        assert!(bin_predictions(&[1.5], &[true], 4).is_err());
    }

    /// Identity-weight model mapping log-probability inputs to those
    /// probabilities, so evaluate() sees exactly the planned confidences.
    fn log_prob_identity_model() -> MlpModel {
        let mut model = MlpModel::zeros(vec![2, 2], 0.0).unwrap();
        model
            .weight_mut(0)
            .data_mut()
            .copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        model
    }

    #[test]
    fn evaluate_reproduces_the_hand_fixture() {
        let model = log_prob_identity_model();
        let ps = [0.6_f64, 0.7, 0.8, 0.9];
        let rows: Vec<Vec<f64>> = ps.iter().map(|&p| vec![p.ln(), (1.0 - p).ln()]).collect();
        let features = Tensor::from_rows(&rows).unwrap();
        // Winning class is always 0; correctness pattern [1, 0, 1, 1].
        let labels = vec![0, 1, 0, 0];
        let ds = Dataset::new("fixture", features, labels, 2).unwrap();
        let report = evaluate(&model, &ds, 4).unwrap();
        assert_eq!(report.n, 4);
        assert!((report.ece - 0.15).abs() < 1e-9);
        assert!((report.oe - 0.04875).abs() < 1e-9);
        assert!((report.accuracy - 0.75).abs() < 1e-15);
        assert!((report.mean_winning_score - 0.75).abs() < 1e-9);
        let total: usize = report.winning_score_histogram.iter().sum();
        assert_eq!(total, report.n);
    }

    #[test]
    fn uniform_predictor_is_calibrated_on_balanced_data() {
        // Zero model -> uniform probabilities -> conf = 1/K and acc ~ 1/K.
        let model = MlpModel::zeros(vec![2, 4], 0.0).unwrap();
        let ds = make_blobs(4, 200, 2, 3.0, 1.0, 3).unwrap();
        let report = evaluate(&model, &ds, 15).unwrap();
        assert!((report.mean_winning_score - 0.25).abs() < 1e-12);
        assert!((report.accuracy - 0.25).abs() < 0.05);
        assert!(report.ece < 0.05);
    }

    #[test]
    fn evaluate_rejects_empty_dataset() {
        let model = MlpModel::zeros(vec![2, 2], 0.0).unwrap();
        let ds = Dataset::new("empty", Tensor::zeros(vec![0, 2]), vec![], 2).unwrap();
        assert!(matches!(evaluate(&model, &ds, 4), Err(Error::Validation(_))));
    }

    #[test]
    fn evaluate_is_bitwise_repeatable() {
        let model = MlpModel::init_seeded(vec![3, 8, 3], 0.0, 13).unwrap();
        let ds = make_blobs(3, 40, 3, 3.0, 1.0, 14).unwrap();
        let a = evaluate(&model, &ds, 15).unwrap();
        let b = evaluate(&model, &ds, 15).unwrap();
        assert_eq!(a.ece.to_bits(), b.ece.to_bits());
        assert_eq!(a.oe.to_bits(), b.oe.to_bits());
        assert_eq!(a.nll.to_bits(), b.nll.to_bits());
    }

    #[test]
    fn tracker_rows_accumulate_in_epoch_order() {
        let model = MlpModel::zeros(vec![2, 3], 0.0).unwrap();
        let ds = make_blobs(3, 30, 2, 3.0, 1.0, 8).unwrap();
        let mut tracker = EpochTracker::new();
        for epoch in 0..5 {
            tracker.track_epoch(&model, &ds, epoch, 10, 1.0).unwrap();
        }
        let rows = tracker.rows();
        assert_eq!(rows.len(), 5);
        for w in rows.windows(2) {
            assert!(w[0].epoch < w[1].epoch);
        }
        // Untrained K-class model scores near 1/K.
        assert!((rows[0].mean_winning_score - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn temperature_identity_and_flattening() {
        let z = Tensor::from_rows(&[vec![2.0, 0.0]]).unwrap();
        let p1 = apply_temperature(&z, 1.0).unwrap();
        let direct = nn::softmax(&z).unwrap();
        assert_eq!(p1.data(), direct.data());

        // T = 2 on [2, 0] equals softmax([1, 0]).
        let p2 = apply_temperature(&z, 2.0).unwrap();
        let expect = nn::softmax(&Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap()).unwrap();
        for (a, b) in p2.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((p2.row(0)[0] - 0.7311).abs() < 1e-4);

        // Large T flattens toward uniform but keeps the winner.
        let p = apply_temperature(&z, 1000.0).unwrap();
        assert!((p.row(0)[0] - 0.5).abs() < 1e-3);
        assert!(p.row(0)[0] > p.row(0)[1]);

        assert!(apply_temperature(&z, 0.0).is_err());
        assert!(apply_temperature(&z, -1.0).is_err());
    }

    #[test]
    fn single_correct_sample_drives_t_to_the_lower_bound() {
        let z = Tensor::from_rows(&[vec![2.0, 0.0]]).unwrap();
        let fit = fit_temperature(&z, &[0], TEMPERATURE_BOUNDS).unwrap();
        assert_eq!(fit.temperature, TEMPERATURE_BOUNDS.0);
        assert!(fit.nll <= fit.nll_at_identity);
    }

    #[test]
    fn fit_never_worse_than_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for trial in 0..20 {
            let n = 30;
            let k = 3;
            let z = Tensor::new(
                vec![n, k],
                (0..n * k).map(|_| rng.random_range(-3.0..3.0)).collect(),
            )
            .unwrap();
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let fit = fit_temperature(&z, &labels, TEMPERATURE_BOUNDS).unwrap();
            assert!(
                fit.nll <= fit.nll_at_identity + 1e-12,
                "trial {trial}: {} vs {}",
                fit.nll,
                fit.nll_at_identity
            );
            assert!((TEMPERATURE_BOUNDS.0..=TEMPERATURE_BOUNDS.1).contains(&fit.temperature));
        }
    }

    #[test]
    fn logits_already_optimal_at_unit_temperature_fit_to_one() {
        // Rescaling any logit set by its own fitted temperature moves the
        // NLL optimum to T = 1, so refitting lands there within the grid
        // resolution.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let n = 40;
        let k = 3;
        let z = Tensor::new(
            vec![n, k],
            (0..n * k).map(|_| rng.random_range(-3.0..3.0)).collect(),
        )
        .unwrap();
        // Labels mostly agree with the logits so the NLL optimum is
        // interior rather than pinned to a search bound.
        let labels: Vec<usize> = (0..n)
            .map(|i| {
                if rng.random::<f64>() < 0.7 {
                    z.row(i)
                        .iter()
                        .enumerate()
                        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                        .unwrap()
                        .0
                } else {
                    rng.random_range(0..k)
                }
            })
            .collect();
        let first = fit_temperature(&z, &labels, TEMPERATURE_BOUNDS).unwrap();
        assert!(first.temperature > TEMPERATURE_BOUNDS.0 && first.temperature < TEMPERATURE_BOUNDS.1);
        let rescaled = Tensor::new(
            z.shape().to_vec(),
            z.data().iter().map(|v| v / first.temperature).collect(),
        )
        .unwrap();
        let second = fit_temperature(&rescaled, &labels, TEMPERATURE_BOUNDS).unwrap();
        assert!(
            (second.temperature - 1.0).abs() <= 0.02,
            "refit temperature {} not at 1 within grid resolution",
            second.temperature
        );
    }

    #[test]
    fn fit_matches_a_fine_grid_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let n = 25;
            let k = 4;
            let z = Tensor::new(
                vec![n, k],
                (0..n * k).map(|_| rng.random_range(-4.0..4.0)).collect(),
            )
            .unwrap();
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let fit = fit_temperature(&z, &labels, TEMPERATURE_BOUNDS).unwrap();

            // Brute-force minimizer on a 0.001 grid.
            let mut best_t = TEMPERATURE_BOUNDS.0;
            let mut best = f64::INFINITY;
            let mut t = TEMPERATURE_BOUNDS.0;
            while t <= TEMPERATURE_BOUNDS.1 {
                let v = nll_at_temperature(&z, &labels, t).unwrap();
                if v < best {
                    best = v;
                    best_t = t;
                }
                t += 0.001;
            }
            assert!(
                (fit.temperature - best_t).abs() <= 0.01 + 1e-9,
                "fit {} vs oracle {}",
                fit.temperature,
                best_t
            );
        }
    }

    #[test]
    fn temperature_preserves_the_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let z = Tensor::new(
            vec![50, 5],
            (0..250).map(|_| rng.random_range(-5.0..5.0)).collect(),
        )
        .unwrap();
        let base = nn::softmax(&z).unwrap();
        for &t in &[0.05, 0.5, 2.0, 10.0] {
            let scaled = apply_temperature(&z, t).unwrap();
            for i in 0..50 {
                let am = |r: &[f64]| {
                    r.iter()
                        .enumerate()
                        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                        .unwrap()
                        .0
                };
                assert_eq!(am(base.row(i)), am(scaled.row(i)));
            }
        }
    }

    #[test]
    fn mc_dropout_with_zero_rate_equals_eval() {
        let model = MlpModel::init_seeded(vec![3, 6, 2], 0.0, 30).unwrap();
        let x = Tensor::from_rows(&[vec![0.3, -0.1, 0.8], vec![1.0, 1.0, 1.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mc = mc_dropout_predict(&model, &x, 7, &mut rng).unwrap();
        let eval = nn::softmax(&model.predict(&x).unwrap()).unwrap();
        for (a, b) in mc.data().iter().zip(eval.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(mc_dropout_predict(&model, &x, 0, &mut rng).is_err());
    }

    #[test]
    fn mc_dropout_rows_are_distributions() {
        let model = MlpModel::init_seeded(vec![3, 16, 4], 0.4, 32).unwrap();
        let x = Tensor::from_rows(&[vec![0.5, -0.5, 0.1]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let probs = mc_dropout_predict(&model, &x, 10, &mut rng).unwrap();
        let sum: f64 = probs.row(0).iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(probs.row(0).iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn mc_dropout_variance_shrinks_with_passes() {
        // Variance of the averaged prediction across repeated runs should
        // scale roughly like 1/K.
        let model = MlpModel::init_seeded(vec![2, 24, 2], 0.5, 34).unwrap();
        let x = Tensor::from_rows(&[vec![0.7, -0.3]]).unwrap();
        let runs = 600;
        let spread = |k: usize, seed0: u64| {
            let mut vals = Vec::with_capacity(runs);
            for r in 0..runs {
                let mut rng = ChaCha8Rng::seed_from_u64(seed0 + r as u64);
                let p = mc_dropout_predict(&model, &x, k, &mut rng).unwrap();
                vals.push(p.row(0)[0]);
            }
            let mean = vals.iter().sum::<f64>() / runs as f64;
            vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / runs as f64
        };
        let v1 = spread(1, 1000);
        let v10 = spread(10, 9000);
        let ratio = v1 / v10;
        assert!(
            (4.0..25.0).contains(&ratio),
            "variance ratio {ratio} not approximately 10"
        );
    }
}
