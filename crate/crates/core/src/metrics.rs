//! Accuracy and calibration metrics.
//!
//! Conventions fixed across the toolkit:
//! - confidence is the largest entry of a probability row;
//! - ECE uses equal-width confidence bins, half-open `[lo, hi)` except the
//!   final bin which is closed at 1; empty bins carry no accuracy or
//!   confidence value (they are reported as absent, never as zero);
//! - the Brier score is the full-vector multiclass sum convention with range
//!   `[0, 2]`: mean over samples of `sum_k (p_k - onehot_k)^2`;
//! - per-class F1 with a zero denominator is defined as 0, and classes absent
//!   from the truth are excluded from the macro-F1 average (logged).

use crate::error::{Error, Result};
use crate::prob::{LabelVector, ProbabilityMatrix};
use crate::scalar::{real_usize, Real};
use serde::Serialize;

/// Default number of equal-width reliability bins.
pub const DEFAULT_ECE_BINS: usize = 15;
/// Strata smaller than this are flagged as low-support.
pub const LOW_SUPPORT_THRESHOLD: usize = 20;

fn check_alignment<F: Real>(p: &ProbabilityMatrix<F>, y: &LabelVector) -> Result<()> {
    if p.n() != y.n() {
        return Err(Error::ShapeMismatch {
            detail: format!("{} probability rows but {} labels", p.n(), y.n()),
        });
    }
    if p.k() != y.k() {
        return Err(Error::ShapeMismatch {
            detail: format!(
                "probabilities have {} classes but labels declare {}",
                p.k(),
                y.k()
            ),
        });
    }
    Ok(())
}

/// Per-bin reliability data from an ECE computation.
///
/// `accuracy[b]` and `mean_confidence[b]` are `None` exactly when
/// `count[b] == 0`.
#[derive(Debug, Clone, Serialize)]
pub struct ReliabilityBins<F: Real> {
    /// `bins + 1` edges partitioning `[0, 1]` into equal-width bins.
    pub edges: Vec<F>,
    /// Samples per bin.
    pub count: Vec<usize>,
    /// Mean confidence per non-empty bin.
    pub mean_confidence: Vec<Option<F>>,
    /// Top-1 accuracy per non-empty bin.
    pub accuracy: Vec<Option<F>>,
}

/// Expected calibration error over equal-width confidence bins:
/// `sum_b (n_b / N) * |accuracy_b - confidence_b|`.
///
/// Returns the scalar ECE together with the per-bin reliability table.
pub fn ece<F: Real>(
    p: &ProbabilityMatrix<F>,
    y: &LabelVector,
    bins: usize,
) -> Result<(F, ReliabilityBins<F>)> {
    check_alignment(p, y)?;
    if bins == 0 {
        return Err(Error::InvalidParameter {
            name: "bins",
            detail: "need at least one bin".into(),
        });
    }
    let n = p.n();
    let bins_real = real_usize::<F>(bins);
    let mut count = vec![0usize; bins];
    let mut conf_sum = vec![F::zero(); bins];
    let mut correct = vec![0usize; bins];
    for i in 0..n {
        let pred = p.argmax_row(i);
        let conf = p.row(i)[pred];
        // Equal-width binning; the final bin is right-closed so that a
        // confidence of exactly 1 lands in the last bin.
        let raw = (conf * bins_real).to_f64().unwrap_or(0.0).floor() as usize;
        let b = raw.min(bins - 1);
        count[b] += 1;
        conf_sum[b] += conf;
        if pred == y.as_slice()[i] {
            correct[b] += 1;
        }
    }
    let n_real = real_usize::<F>(n);
    let mut value = F::zero();
    let mut mean_confidence = Vec::with_capacity(bins);
    let mut accuracy = Vec::with_capacity(bins);
    for b in 0..bins {
        if count[b] == 0 {
            mean_confidence.push(None);
            accuracy.push(None);
            continue;
        }
        let nb = real_usize::<F>(count[b]);
        let conf = conf_sum[b] / nb;
        let acc = real_usize::<F>(correct[b]) / nb;
        value += nb / n_real * (acc - conf).abs();
        mean_confidence.push(Some(conf));
        accuracy.push(Some(acc));
    }
    let edges = (0..=bins)
        .map(|b| real_usize::<F>(b) / bins_real)
        .collect();
    Ok((
        value,
        ReliabilityBins {
            edges,
            count,
            mean_confidence,
            accuracy,
        },
    ))
}

/// Multiclass Brier score, full-vector sum convention (range `[0, 2]`):
/// mean over samples of `sum_k (p_k - onehot_k)^2`.
pub fn brier<F: Real>(p: &ProbabilityMatrix<F>, y: &LabelVector) -> Result<F> {
    check_alignment(p, y)?;
    let mut total = F::zero();
    for (i, row) in p.rows().enumerate() {
        let label = y.as_slice()[i];
        for (j, &v) in row.iter().enumerate() {
            let target = if j == label { F::one() } else { F::zero() };
            let d = v - target;
            total += d * d;
        }
    }
    Ok(total / real_usize::<F>(p.n()))
}

/// Confusion matrix and summary rates for hard argmax predictions.
#[derive(Debug, Clone, Serialize)]
pub struct ClassificationReport<F: Real> {
    /// `K x K` confusion counts; rows index the true class, columns the
    /// predicted class.
    pub confusion: Vec<Vec<usize>>,
    /// Fraction of samples whose argmax prediction matches the label.
    pub top1_accuracy: F,
    /// Unweighted mean F1 over classes present in the truth.
    pub macro_f1: F,
    /// Per-class recall; `None` for classes absent from the truth.
    pub per_class_sensitivity: Vec<Option<F>>,
    /// Per-class true-negative rate; `None` when a class has no negatives.
    pub per_class_specificity: Vec<Option<F>>,
}

/// Computes the confusion matrix, top-1 accuracy, macro F1, and per-class
/// sensitivity/specificity. Argmax ties break toward the lowest class index.
///
/// Classes absent from the truth are excluded from macro F1 and reported with
/// absent sensitivity; the exclusion is logged.
pub fn classification_report<F: Real>(
    p: &ProbabilityMatrix<F>,
    y: &LabelVector,
) -> Result<ClassificationReport<F>> {
    check_alignment(p, y)?;
    let k = p.k();
    let n = p.n();
    let mut confusion = vec![vec![0usize; k]; k];
    let mut correct = 0usize;
    for i in 0..n {
        let pred = p.argmax_row(i);
        let truth = y.as_slice()[i];
        confusion[truth][pred] += 1;
        if pred == truth {
            correct += 1;
        }
    }
    let mut per_class_sensitivity = Vec::with_capacity(k);
    let mut per_class_specificity = Vec::with_capacity(k);
    let mut f1_sum = F::zero();
    let mut f1_count = 0usize;
    let mut absent: Vec<usize> = Vec::new();
    for c in 0..k {
        let tp = confusion[c][c];
        let fn_ = confusion[c].iter().sum::<usize>() - tp;
        let fp = (0..k).map(|r| confusion[r][c]).sum::<usize>() - tp;
        let tn = n - tp - fn_ - fp;
        let truth_count = tp + fn_;
        if truth_count == 0 {
            absent.push(c);
            per_class_sensitivity.push(None);
        } else {
            per_class_sensitivity.push(Some(
                real_usize::<F>(tp) / real_usize::<F>(truth_count),
            ));
            // F1 = 2TP / (2TP + FP + FN), defined as 0 when the denominator
            // is 0 (possible only if the class is never predicted either).
            let denom = 2 * tp + fp + fn_;
            let f1 = if denom == 0 {
                F::zero()
            } else {
                real_usize::<F>(2 * tp) / real_usize::<F>(denom)
            };
            f1_sum += f1;
            f1_count += 1;
        }
        if tn + fp == 0 {
            per_class_specificity.push(None);
        } else {
            per_class_specificity.push(Some(real_usize::<F>(tn) / real_usize::<F>(tn + fp)));
        }
    }
    if !absent.is_empty() {
        log::warn!(
            "classes {absent:?} absent from the truth; macro F1 averages the {} present classes",
            f1_count
        );
    }
    let macro_f1 = if f1_count == 0 {
        F::zero()
    } else {
        f1_sum / real_usize::<F>(f1_count)
    };
    Ok(ClassificationReport {
        confusion,
        top1_accuracy: real_usize::<F>(correct) / real_usize::<F>(n),
        macro_f1,
        per_class_sensitivity,
        per_class_specificity,
    })
}

/// Metrics for one stratum of a grouped evaluation.
#[derive(Debug, Clone, Serialize)]
pub struct StratumReport<F: Real> {
    /// Group value this stratum corresponds to.
    pub key: String,
    /// Number of samples in the stratum.
    pub n: usize,
    /// Whether the stratum is below the low-support threshold (20 samples).
    pub low_support: bool,
    /// Classification metrics within the stratum.
    pub report: ClassificationReport<F>,
    /// ECE within the stratum.
    pub ece: F,
    /// Reliability bins within the stratum.
    pub bins: ReliabilityBins<F>,
    /// Brier score within the stratum.
    pub brier: F,
}

/// Splits samples by an opaque group key and evaluates each stratum.
///
/// Strata are returned in lexicographic key order. Groups smaller than 20
/// samples are flagged `low_support` and logged, never silently dropped.
pub fn stratified_report<F: Real>(
    p: &ProbabilityMatrix<F>,
    y: &LabelVector,
    groups: &[String],
    bins: usize,
) -> Result<Vec<StratumReport<F>>> {
    check_alignment(p, y)?;
    if groups.len() != p.n() {
        return Err(Error::ShapeMismatch {
            detail: format!("{} group keys but {} samples", groups.len(), p.n()),
        });
    }
    let mut order: std::collections::BTreeMap<&str, Vec<usize>> = std::collections::BTreeMap::new();
    for (i, g) in groups.iter().enumerate() {
        order.entry(g.as_str()).or_default().push(i);
    }
    let mut out = Vec::with_capacity(order.len());
    for (key, rows) in order {
        let mut data = Vec::with_capacity(rows.len() * p.k());
        let mut labels = Vec::with_capacity(rows.len());
        for &i in &rows {
            data.extend_from_slice(p.row(i));
            labels.push(y.as_slice()[i]);
        }
        let sub_p = ProbabilityMatrix::from_normalized(data, rows.len(), p.k());
        let sub_y = LabelVector::new(labels, y.k())?;
        let report = classification_report(&sub_p, &sub_y)?;
        let (ece_value, bins_table) = ece(&sub_p, &sub_y, bins)?;
        let brier_value = brier(&sub_p, &sub_y)?;
        let low_support = rows.len() < LOW_SUPPORT_THRESHOLD;
        if low_support {
            log::warn!(
                "stratum `{key}` has only {} samples (< {LOW_SUPPORT_THRESHOLD}); metrics are low-support",
                rows.len()
            );
        }
        out.push(StratumReport {
            key: key.to_string(),
            n: rows.len(),
            low_support,
            report,
            ece: ece_value,
            bins: bins_table,
            brier: brier_value,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[&[f64]]) -> ProbabilityMatrix<f64> {
        let k = rows[0].len();
        let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        ProbabilityMatrix::new(data, rows.len(), k).unwrap()
    }

    #[test]
    fn perfectly_calibrated_bins_give_zero_ece() {
        // Two samples in the same bin with confidence 0.75, one correct and
        // one wrong would give acc 0.5; instead use all-correct confident
        // rows where confidence == accuracy == 1 is unreachable, so check a
        // constructed zero-gap case: confidence 0.5 rows, half correct.
        let p = matrix(&[&[0.5, 0.5], &[0.5, 0.5]]);
        // Argmax ties to class 0; one label 0 (correct), one label 1 (wrong):
        // bin accuracy 0.5 equals bin confidence 0.5, ECE = 0.
        let y = LabelVector::new(vec![0, 1], 2).unwrap();
        let (value, bins) = ece(&p, &y, 15).unwrap();
        assert!(value.abs() < 1e-15);
        let filled: Vec<usize> = bins
            .count
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(b, _)| b)
            .collect();
        assert_eq!(filled, vec![7]); // 0.5 * 15 = 7.5 -> bin 7
    }

    #[test]
    fn ece_matches_hand_computation_with_two_bins() {
        // Bin [0, 0.5): nothing. Bin [0.5, 1]: all four rows.
        // Confidences 0.9, 0.8, 0.6, 0.7 (mean 0.75); correctness 1, 0, 1, 1
        // (acc 0.75); ECE = |0.75 - 0.75| = 0.
        let p = matrix(&[
            &[0.9, 0.1],
            &[0.8, 0.2],
            &[0.4, 0.6],
            &[0.3, 0.7],
        ]);
        let y = LabelVector::new(vec![0, 1, 1, 1], 2).unwrap();
        let (value, bins) = ece(&p, &y, 2).unwrap();
        assert!((value - 0.0).abs() < 1e-15);
        assert_eq!(bins.count, vec![0, 4]);
        assert_eq!(bins.accuracy[0], None);
        assert_eq!(bins.mean_confidence[0], None);
        assert!((bins.accuracy[1].unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn confidence_of_exactly_one_lands_in_the_final_bin() {
        let p = matrix(&[&[1.0, 0.0]]);
        let y = LabelVector::new(vec![0], 2).unwrap();
        let (_, bins) = ece(&p, &y, 15).unwrap();
        assert_eq!(bins.count[14], 1);
    }

    #[test]
    fn empty_bins_are_absent_not_zero() {
        let p = matrix(&[&[0.95, 0.05]]);
        let y = LabelVector::new(vec![0], 2).unwrap();
        let (_, bins) = ece(&p, &y, 15).unwrap();
        for b in 0..14 {
            assert_eq!(bins.count[b], 0);
            assert!(bins.accuracy[b].is_none());
        }
        assert!(bins.accuracy[14].is_some());
    }

    #[test]
    fn uniform_probabilities_have_brier_five_sixths() {
        let p = ProbabilityMatrix::new(vec![1.0f64 / 6.0; 6], 1, 6).unwrap();
        let y = LabelVector::new(vec![3], 6).unwrap();
        let b = brier(&p, &y).unwrap();
        assert!((b - 5.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn maximally_wrong_confident_prediction_has_brier_two() {
        let p = matrix(&[&[1.0, 0.0]]);
        let y = LabelVector::new(vec![1], 2).unwrap();
        assert!((brier(&p, &y).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn report_matches_the_all_one_class_predictor() {
        // Binary, balanced, 4 samples, everything predicted class 0:
        // class 0 F1 = 2/3, class 1 F1 = 0, macro = 1/3, accuracy = 0.5.
        let p = matrix(&[
            &[0.9, 0.1],
            &[0.8, 0.2],
            &[0.7, 0.3],
            &[0.6, 0.4],
        ]);
        let y = LabelVector::new(vec![0, 0, 1, 1], 2).unwrap();
        let report = classification_report(&p, &y).unwrap();
        assert!((report.top1_accuracy - 0.5).abs() < 1e-15);
        assert!((report.macro_f1 - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(report.confusion, vec![vec![2, 0], vec![2, 0]]);
        assert_eq!(report.per_class_sensitivity[0], Some(1.0));
        assert_eq!(report.per_class_sensitivity[1], Some(0.0));
        assert_eq!(report.per_class_specificity[0], Some(0.0));
        assert_eq!(report.per_class_specificity[1], Some(1.0));
    }

    #[test]
    fn absent_classes_are_excluded_from_macro_f1() {
        // Three classes declared, class 2 never appears in the truth.
        let p = matrix(&[&[0.8, 0.1, 0.1], &[0.1, 0.8, 0.1]]);
        let y = LabelVector::new(vec![0, 1], 3).unwrap();
        let report = classification_report(&p, &y).unwrap();
        assert_eq!(report.per_class_sensitivity[2], None);
        // Both present classes are perfectly predicted.
        assert!((report.macro_f1 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn stratified_report_splits_by_key_and_flags_low_support() {
        let p = matrix(&[
            &[0.9, 0.1],
            &[0.2, 0.8],
            &[0.7, 0.3],
            &[0.4, 0.6],
        ]);
        let y = LabelVector::new(vec![0, 1, 0, 1], 2).unwrap();
        let groups = vec!["b".to_string(), "a".to_string(), "b".to_string(), "a".to_string()];
        let strata = stratified_report(&p, &y, &groups, 10).unwrap();
        assert_eq!(strata.len(), 2);
        assert_eq!(strata[0].key, "a");
        assert_eq!(strata[1].key, "b");
        assert_eq!(strata[0].n, 2);
        assert!(strata[0].low_support);
        assert!((strata[0].report.top1_accuracy - 1.0).abs() < 1e-15);
        assert!((strata[1].report.top1_accuracy - 1.0).abs() < 1e-15);
    }

    #[test]
    fn stratified_group_accuracies_pool_back_to_the_overall_accuracy() {
        let p = matrix(&[
            &[0.9, 0.1],
            &[0.2, 0.8],
            &[0.7, 0.3],
            &[0.4, 0.6],
            &[0.55, 0.45],
        ]);
        let y = LabelVector::new(vec![0, 0, 0, 1, 1], 2).unwrap();
        let groups = vec![
            "x".to_string(),
            "y".to_string(),
            "x".to_string(),
            "y".to_string(),
            "x".to_string(),
        ];
        let strata = stratified_report(&p, &y, &groups, 15).unwrap();
        let pooled = classification_report(&p, &y).unwrap().top1_accuracy;
        let weighted: f64 = strata
            .iter()
            .map(|s| s.report.top1_accuracy * s.n as f64)
            .sum::<f64>()
            / p.n() as f64;
        assert!((pooled - weighted).abs() < 1e-12);
    }

    #[test]
    fn zero_bins_are_rejected() {
        let p = matrix(&[&[0.9, 0.1]]);
        let y = LabelVector::new(vec![0], 2).unwrap();
        assert!(ece(&p, &y, 0).is_err());
    }
}
