//! Randomized invariant suite.
//!
//! Each property runs at least 1000 randomized instances and checks a
//! structural guarantee that must hold for every valid input, independent of
//! any particular data distribution: simplex bounds after softmax, argmax
//! preservation under temperature scaling, entropy and mutual-information
//! bounds, conformal score ranges and set monotonicity, risk–coverage
//! identities, and metric ranges.

use proptest::prelude::*;
use uqcal_core::calibration::apply_temperature;
use uqcal_core::conformal::{aps_scores, conformal_quantile, prediction_set};
use uqcal_core::metrics::{brier, ece};
use uqcal_core::prob::{softmax_matrix, LabelVector, LogitsMatrix, PassStack, StackKind};
use uqcal_core::saliency::{normalize_map, SaliencyMap};
use uqcal_core::selective::{risk_coverage_curve, threshold_for_target_risk};
use uqcal_core::uncertainty::{
    mutual_information, normalize_uncertainty, predictive_entropy_matrix,
};

const CASES: u32 = 1000;

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Random logits with shape metadata: k classes, n rows.
fn logits_case(
    max_n: usize,
    max_k: usize,
) -> impl Strategy<Value = (Vec<f64>, usize, usize)> {
    (1..=max_n, 2..=max_k).prop_flat_map(|(n, k)| {
        prop::collection::vec(-40.0f64..40.0, n * k).prop_map(move |v| (v, n, k))
    })
}

/// Random logits plus one label per row.
fn labeled_case(
    max_n: usize,
    max_k: usize,
) -> impl Strategy<Value = (Vec<f64>, Vec<usize>, usize, usize)> {
    logits_case(max_n, max_k).prop_flat_map(|(v, n, k)| {
        prop::collection::vec(0..k, n).prop_map(move |y| (v.clone(), y, n, k))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(CASES))]

    #[test]
    fn softmax_rows_form_a_simplex_and_keep_the_argmax((v, n, k) in logits_case(20, 8)) {
        let logits = LogitsMatrix::new(v, n, k).unwrap();
        let p = softmax_matrix(&logits);
        for i in 0..n {
            let row = p.row(i);
            let mut sum = 0.0;
            for &x in row {
                prop_assert!((0.0..=1.0).contains(&x));
                sum += x;
            }
            prop_assert!((sum - 1.0).abs() <= 1e-9);
            prop_assert_eq!(argmax(row), argmax(logits.row(i)));
        }
    }

    #[test]
    fn temperature_scaling_preserves_the_argmax(
        (v, n, k) in logits_case(12, 8),
        t in 0.05f64..=20.0,
    ) {
        let logits = LogitsMatrix::new(v, n, k).unwrap();
        let scaled = apply_temperature(&logits, t).unwrap();
        for i in 0..n {
            prop_assert_eq!(argmax(scaled.row(i)), argmax(logits.row(i)));
        }
    }

    #[test]
    fn entropy_lies_between_zero_and_ln_k((v, n, k) in logits_case(20, 8)) {
        let p = softmax_matrix(&LogitsMatrix::new(v, n, k).unwrap());
        let h = predictive_entropy_matrix(&p);
        let cap = (k as f64).ln() + 1e-9;
        for &x in &h {
            prop_assert!(x >= 0.0 && x <= cap, "entropy {x} outside [0, ln {k}]");
        }
        let normalized = normalize_uncertainty(&h, k).unwrap();
        for &u in &normalized {
            prop_assert!((0.0..=1.0).contains(&u));
        }
    }

    #[test]
    fn mutual_information_is_non_negative_and_below_mean_entropy(
        (v, n, k) in logits_case(6, 6),
        t in 2usize..=5,
    ) {
        // Reuse the row pool cyclically to build a T x N x K stack.
        let mut data = Vec::with_capacity(t * n * k);
        for pass in 0..t {
            for i in 0..n {
                for j in 0..k {
                    let idx = ((pass + i) % n) * k + j;
                    data.push(v[idx] * (1.0 + 0.1 * pass as f64));
                }
            }
        }
        let stack = PassStack::new(data, t, n, k, StackKind::Logits).unwrap();
        let mi = mutual_information(&stack).unwrap();
        let mean_entropy = {
            let mean = stack.mean_probability();
            predictive_entropy_matrix(&mean)
        };
        for i in 0..n {
            prop_assert!(mi[i] >= 0.0);
            prop_assert!(mi[i] <= mean_entropy[i] + 1e-9);
        }
    }

    #[test]
    fn conformal_scores_are_probabilities_and_sets_grow_with_coverage(
        (v, y, n, k) in labeled_case(24, 8),
        alpha_lo in 0.02f64..0.3,
        gap in 0.05f64..0.4,
    ) {
        let p = softmax_matrix(&LogitsMatrix::new(v, n, k).unwrap());
        let labels = LabelVector::new(y, k).unwrap();
        let scores = aps_scores(&p, &labels, None).unwrap();
        for &s in &scores {
            prop_assert!((0.0..=1.0).contains(&s));
        }
        let alpha_hi = (alpha_lo + gap).min(0.49);
        // Lower alpha asks for more coverage, hence a larger threshold.
        let q_strict = conformal_quantile(&scores, alpha_lo, false).unwrap();
        let q_loose = conformal_quantile(&scores, alpha_hi, false).unwrap();
        prop_assert!((0.0..=1.0).contains(&q_strict.qhat));
        prop_assert!(q_strict.qhat >= q_loose.qhat);
        for i in 0..n {
            let row = p.row_vector(i);
            let small = prediction_set(&row, &q_loose);
            let large = prediction_set(&row, &q_strict);
            prop_assert!(small.size() >= 1);
            prop_assert!(small.members.iter().all(|&m| large.contains(m)));
            // The top-probability class is always included.
            prop_assert!(small.contains(argmax(p.row(i))));
            // Members are sorted, unique, and in range.
            prop_assert!(small.members.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(small.members.iter().all(|&c| c < k));
        }
    }

    #[test]
    fn risk_coverage_curves_end_at_the_top1_error_rate(
        (v, y, n, k) in labeled_case(30, 6),
    ) {
        let p = softmax_matrix(&LogitsMatrix::new(v, n, k).unwrap());
        let confidence: Vec<f64> = (0..n).map(|i| p.confidence_row(i)).collect();
        let correct: Vec<bool> = (0..n).map(|i| p.argmax_row(i) == y[i]).collect();
        let curve = risk_coverage_curve(&confidence, &correct).unwrap();
        prop_assert_eq!(curve.points.len(), n);
        let errors = correct.iter().filter(|&&c| !c).count();
        let last = curve.points.last().unwrap();
        prop_assert!((last.coverage - 1.0).abs() < 1e-12);
        prop_assert!((last.risk - errors as f64 / n as f64).abs() < 1e-12);
        let mut prev_cov = 0.0;
        for pt in &curve.points {
            prop_assert!((0.0..=1.0).contains(&pt.risk));
            prop_assert!(pt.coverage > prev_cov);
            prev_cov = pt.coverage;
        }
        prop_assert!((0.0..=1.0).contains(&curve.aurc));
    }

    #[test]
    fn selective_policies_meet_their_target_on_feasible_inputs(
        (v, y, n, k) in labeled_case(30, 6),
        target in 0.0f64..=1.0,
    ) {
        let p = softmax_matrix(&LogitsMatrix::new(v, n, k).unwrap());
        let confidence: Vec<f64> = (0..n).map(|i| p.confidence_row(i)).collect();
        let correct: Vec<bool> = (0..n).map(|i| p.argmax_row(i) == y[i]).collect();
        let curve = risk_coverage_curve(&confidence, &correct).unwrap();
        let policy = threshold_for_target_risk(&curve, target).unwrap();
        match policy.achieved_risk {
            Some(risk) => {
                prop_assert!(risk <= target + 1e-12);
                prop_assert!(policy.threshold.is_some());
            }
            None => {
                prop_assert!(policy.threshold.is_none());
                prop_assert!((policy.abstention_rate - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn calibration_error_and_brier_stay_in_their_ranges(
        (v, y, n, k) in labeled_case(40, 8),
        bins in 1usize..=30,
    ) {
        let p = softmax_matrix(&LogitsMatrix::new(v, n, k).unwrap());
        let labels = LabelVector::new(y, k).unwrap();
        let (e, detail) = ece(&p, &labels, bins).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
        let mut weighted_gap = 0.0;
        for b in 0..bins {
            match (detail.accuracy[b], detail.mean_confidence[b]) {
                (Some(acc), Some(conf)) => {
                    prop_assert!(detail.count[b] > 0);
                    weighted_gap +=
                        detail.count[b] as f64 / n as f64 * (acc - conf).abs();
                }
                (None, None) => prop_assert_eq!(detail.count[b], 0),
                _ => prop_assert!(false, "bin {b} has mismatched presence"),
            }
        }
        prop_assert!((weighted_gap - e).abs() <= 1e-12);
        let b = brier(&p, &labels).unwrap();
        prop_assert!((0.0..=2.0).contains(&b));
    }

    #[test]
    fn map_normalization_lands_in_the_unit_interval(
        values in prop::collection::vec(-100.0f64..100.0, 1..64),
    ) {
        let w = values.len();
        let map = SaliencyMap::new(values.clone(), 1, w).unwrap();
        let normalized = normalize_map(&map);
        prop_assert!(normalized.is_normalized());
        for &x in normalized.as_slice() {
            prop_assert!((0.0..=1.0).contains(&x));
        }
        let spread = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - values.iter().cloned().fold(f64::INFINITY, f64::min);
        if spread > 1e-9 {
            let max = normalized.as_slice().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let min = normalized.as_slice().iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assert!((max - 1.0).abs() < 1e-12);
            prop_assert!(min.abs() < 1e-12);
        }
    }
}
