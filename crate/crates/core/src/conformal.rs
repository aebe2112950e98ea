//! Split conformal prediction with adaptive prediction sets (APS).
//!
//! Calibration computes a nonconformity score per held-out sample, takes the
//! `ceil((n+1)(1-alpha))`-th smallest score as the threshold `qhat`, and
//! prediction builds the smallest descending-probability class set whose
//! cumulative mass reaches `qhat`. Under exchangeability of calibration and
//! test samples the sets cover the true label with probability at least
//! `1 - alpha` marginally.
//!
//! The default score is deterministic (it includes the full probability of
//! the true class); the randomized variant replaces that last term with
//! `u * p_y` for a caller-supplied uniform draw, which tightens coverage
//! toward the nominal level.

use crate::error::{Error, Result};
use crate::prob::{LabelVector, ProbabilityMatrix, ProbabilityVector};
use crate::scalar::{real_usize, Real};
use serde::Serialize;

/// Calibrated conformal threshold.
#[derive(Debug, Clone, Serialize)]
pub struct ConformalCalibration<F: Real> {
    /// Score threshold in `[0, 1]`.
    pub qhat: F,
    /// Miscoverage level the threshold was calibrated for.
    pub alpha: F,
    /// Number of calibration samples.
    pub n_cal: usize,
    /// Whether calibration scores used the randomized variant.
    pub randomized: bool,
}

/// A conformal prediction set: class indices in ascending order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PredictionSet {
    /// Member class indices, sorted ascending. Never empty.
    pub members: Vec<usize>,
}

impl PredictionSet {
    /// Number of classes in the set.
    pub fn size(&self) -> usize {
        self.members.len()
    }

    /// Whether the set contains a class.
    pub fn contains(&self, class: usize) -> bool {
        self.members.binary_search(&class).is_ok()
    }
}

/// Summary of prediction sets against true labels.
#[derive(Debug, Clone, Serialize)]
pub struct CoverageReport<F: Real> {
    /// Fraction of samples whose set contains the true label.
    pub coverage: F,
    /// Mean set size.
    pub mean_size: F,
    /// `size_histogram[s]` counts sets of size `s`; index 0 is always 0
    /// because sets are never empty.
    pub size_histogram: Vec<usize>,
}

/// APS nonconformity score of the true class `y` under probability row `p`:
/// the cumulative mass of classes ranked strictly before `y` (probability
/// descending, ties toward the lower index) plus `p_y`, or plus `u * p_y`
/// for the randomized variant.
pub fn aps_score<F: Real>(
    p: &ProbabilityVector<F>,
    y: usize,
    randomized: bool,
    u: F,
) -> Result<F> {
    let row = p.as_slice();
    if y >= row.len() {
        return Err(Error::LabelOutOfRange {
            row: 0,
            label: y,
            k: row.len(),
        });
    }
    if randomized && (!u.is_finite() || u < F::zero() || u > F::one()) {
        return Err(Error::InvalidParameter {
            name: "u",
            detail: format!("randomized score needs u in [0, 1], got {u}"),
        });
    }
    let p_y = row[y];
    let mut before = F::zero();
    for (j, &pj) in row.iter().enumerate() {
        if pj > p_y || (pj == p_y && j < y) {
            before += pj;
        }
    }
    let last = if randomized { u * p_y } else { p_y };
    // The mathematical range is [0, 1]; summing a whole row can overshoot 1
    // by a few ulps, so clamp.
    Ok((before + last).max(F::zero()).min(F::one()))
}

/// APS scores for every row of a probability matrix. For the randomized
/// variant the caller supplies one uniform draw per sample in `us`.
pub fn aps_scores<F: Real>(
    p: &ProbabilityMatrix<F>,
    y: &LabelVector,
    us: Option<&[F]>,
) -> Result<Vec<F>> {
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
    if let Some(us) = us {
        if us.len() != p.n() {
            return Err(Error::ShapeMismatch {
                detail: format!("{} uniform draws but {} samples", us.len(), p.n()),
            });
        }
    }
    let mut out = Vec::with_capacity(p.n());
    for i in 0..p.n() {
        let row = p.row_vector(i);
        let score = match us {
            Some(us) => aps_score(&row, y.as_slice()[i], true, us[i])?,
            None => aps_score(&row, y.as_slice()[i], false, F::one())?,
        };
        out.push(score);
    }
    Ok(out)
}

/// Calibrates the conformal threshold: the `ceil((n+1)(1-alpha))`-th smallest
/// score. When that rank exceeds `n` (alpha too small for the calibration
/// size) the threshold clamps to 1.0 and a warning is logged.
pub fn conformal_quantile<F: Real>(
    scores: &[F],
    alpha: F,
    randomized: bool,
) -> Result<ConformalCalibration<F>> {
    if scores.is_empty() {
        return Err(Error::Empty {
            what: "conformal calibration scores".into(),
        });
    }
    if !alpha.is_finite() || alpha <= F::zero() || alpha >= F::one() {
        return Err(Error::InvalidParameter {
            name: "alpha",
            detail: format!("must lie strictly inside (0, 1), got {alpha}"),
        });
    }
    for (i, &s) in scores.iter().enumerate() {
        if !s.is_finite() {
            return Err(Error::NonFinite {
                what: format!("calibration score {i}"),
            });
        }
    }
    let n = scores.len();
    // Stable ceiling: (n+1)(1-alpha) computed in f64 can land a hair above an
    // exact integer (e.g. 20 * 0.95); nudge down before taking the ceiling.
    let raw = (n as f64 + 1.0) * (1.0 - alpha.to_f64().unwrap_or(f64::NAN));
    let rank = (raw - 1e-9).ceil().max(1.0) as usize;
    let qhat = if rank > n {
        log::warn!(
            "conformal rank {rank} exceeds the {n} calibration samples (alpha too small); \
             clamping the threshold to 1.0"
        );
        F::one()
    } else {
        let mut sorted = scores.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("scores checked finite"));
        sorted[rank - 1].max(F::zero()).min(F::one())
    };
    Ok(ConformalCalibration {
        qhat,
        alpha,
        n_cal: n,
        randomized,
    })
}

/// Builds the prediction set for one probability row: classes in descending
/// probability order (ties toward the lower index) until the cumulative mass
/// reaches `qhat`. The top-1 class is always included.
pub fn prediction_set<F: Real>(
    p: &ProbabilityVector<F>,
    cal: &ConformalCalibration<F>,
) -> PredictionSet {
    let row = p.as_slice();
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| {
        row[b]
            .partial_cmp(&row[a])
            .expect("probability entries are finite")
            .then(a.cmp(&b))
    });
    let mut members = Vec::new();
    let mut cum = F::zero();
    for &class in &order {
        members.push(class);
        cum += row[class];
        if cum >= cal.qhat {
            break;
        }
    }
    members.sort_unstable();
    PredictionSet { members }
}

/// Summarizes coverage and set sizes against true labels.
pub fn coverage_report<F: Real>(
    sets: &[PredictionSet],
    y: &LabelVector,
) -> Result<CoverageReport<F>> {
    if sets.is_empty() {
        return Err(Error::Empty {
            what: "prediction sets".into(),
        });
    }
    if sets.len() != y.n() {
        return Err(Error::ShapeMismatch {
            detail: format!("{} prediction sets but {} labels", sets.len(), y.n()),
        });
    }
    let k = y.k();
    let mut covered = 0usize;
    let mut size_histogram = vec![0usize; k + 1];
    let mut size_sum = 0usize;
    for (i, set) in sets.iter().enumerate() {
        if set.members.iter().any(|&c| c >= k) {
            return Err(Error::ShapeMismatch {
                detail: format!("set {i} contains a class index >= {k}"),
            });
        }
        if set.contains(y.as_slice()[i]) {
            covered += 1;
        }
        size_sum += set.size();
        size_histogram[set.size()] += 1;
    }
    let n = real_usize::<F>(sets.len());
    Ok(CoverageReport {
        coverage: real_usize::<F>(covered) / n,
        mean_size: real_usize::<F>(size_sum) / n,
        size_histogram,
    })
}

/// Nominal coverage bounds of the split-conformal guarantee for a calibrated
/// threshold: at least `1 - alpha`, at most `1 - alpha + 1/(n_cal + 1)` for
/// the score-threshold event under exchangeability.
pub fn nominal_coverage_bounds<F: Real>(cal: &ConformalCalibration<F>) -> (F, F) {
    let lo = F::one() - cal.alpha;
    let hi = (lo + F::one() / real_usize::<F>(cal.n_cal + 1)).min(F::one());
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(row: &[f64]) -> ProbabilityVector<f64> {
        ProbabilityVector::new(row.to_vec()).unwrap()
    }

    fn cal(qhat: f64) -> ConformalCalibration<f64> {
        ConformalCalibration {
            qhat,
            alpha: 0.1,
            n_cal: 100,
            randomized: false,
        }
    }

    #[test]
    fn deterministic_score_accumulates_ranked_mass() {
        let p = pv(&[0.7, 0.2, 0.1]);
        assert!((aps_score(&p, 0, false, 1.0).unwrap() - 0.7).abs() < 1e-12);
        assert!((aps_score(&p, 1, false, 1.0).unwrap() - 0.9).abs() < 1e-12);
        assert!((aps_score(&p, 2, false, 1.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn randomized_score_with_zero_u_drops_the_own_class_mass() {
        let p = pv(&[0.7, 0.2, 0.1]);
        assert!((aps_score(&p, 1, true, 0.0).unwrap() - 0.7).abs() < 1e-12);
        assert!((aps_score(&p, 1, true, 0.5).unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn score_ties_rank_the_lower_index_first() {
        let p = pv(&[0.4, 0.4, 0.2]);
        // Class 1 ties with class 0; the lower index ranks first.
        assert!((aps_score(&p, 0, false, 1.0).unwrap() - 0.4).abs() < 1e-12);
        assert!((aps_score(&p, 1, false, 1.0).unwrap() - 0.8).abs() < 1e-12);
    }

    #[test]
    fn randomized_u_outside_unit_interval_is_rejected() {
        let p = pv(&[0.6, 0.4]);
        assert!(aps_score(&p, 0, true, 1.5).is_err());
        assert!(aps_score(&p, 0, true, -0.1).is_err());
        assert!(aps_score(&p, 0, true, f64::NAN).is_err());
    }

    #[test]
    fn quantile_picks_the_ceil_rank() {
        // Scores 0.002, 0.004, ..., 1.000 (n = 500): rank = ceil(501 * 0.9)
        // = 451, so qhat = 0.902.
        let scores: Vec<f64> = (1..=500).map(|i| i as f64 / 500.0).collect();
        let cal = conformal_quantile(&scores, 0.1, false).unwrap();
        assert!((cal.qhat - 0.902).abs() < 1e-12);
        assert_eq!(cal.n_cal, 500);
    }

    #[test]
    fn quantile_rank_is_stable_against_float_ceiling_noise() {
        // (19 + 1) * (1 - 0.05) is exactly 19 mathematically but floats give
        // 19.000000000000004; the rank must stay 19, not jump to 20.
        let scores: Vec<f64> = (1..=19).map(|i| i as f64 / 19.0).collect();
        let cal = conformal_quantile(&scores, 0.05, false).unwrap();
        assert!((cal.qhat - 1.0).abs() < 1e-12); // 19th of 19
        let scores: Vec<f64> = (1..=9).map(|i| i as f64 / 10.0).collect();
        let cal = conformal_quantile(&scores, 0.1, false).unwrap();
        assert!((cal.qhat - 0.9).abs() < 1e-12); // rank 9 of 9
    }

    #[test]
    fn quantile_overflow_clamps_to_one_with_warning() {
        let scores = vec![0.1, 0.2, 0.3, 0.4, 0.5];
        let cal = conformal_quantile(&scores, 0.01, false).unwrap();
        assert_eq!(cal.qhat, 1.0);
    }

    #[test]
    fn alpha_outside_open_interval_is_rejected() {
        let scores = vec![0.5, 0.6];
        assert!(conformal_quantile(&scores, 0.0, false).is_err());
        assert!(conformal_quantile(&scores, 1.0, false).is_err());
        assert!(conformal_quantile(&scores, -0.2, false).is_err());
    }

    #[test]
    fn set_includes_classes_until_the_threshold() {
        let p = pv(&[0.7, 0.2, 0.1]);
        assert_eq!(prediction_set(&p, &cal(0.75)).members, vec![0, 1]);
    }

    #[test]
    fn zero_threshold_still_includes_top1() {
        let p = pv(&[0.7, 0.2, 0.1]);
        assert_eq!(prediction_set(&p, &cal(0.0)).members, vec![0]);
    }

    #[test]
    fn full_threshold_includes_every_class() {
        let p = pv(&[0.7, 0.2, 0.1]);
        assert_eq!(prediction_set(&p, &cal(1.0)).members, vec![0, 1, 2]);
    }

    #[test]
    fn set_ties_break_toward_the_lower_index() {
        let p = pv(&[0.2, 0.4, 0.4]);
        // Descending order with ties toward lower index: 1, 2, 0.
        assert_eq!(prediction_set(&p, &cal(0.5)).members, vec![1, 2]);
    }

    #[test]
    fn sets_grow_monotonically_with_the_threshold() {
        let p = pv(&[0.5, 0.3, 0.15, 0.05]);
        let mut prev = 0usize;
        for &q in &[0.0, 0.4, 0.6, 0.8, 0.95, 1.0] {
            let size = prediction_set(&p, &cal(q)).size();
            assert!(size >= prev, "set shrank when qhat grew to {q}");
            prev = size;
        }
    }

    #[test]
    fn coverage_report_counts_membership_and_sizes() {
        let sets = vec![
            PredictionSet { members: vec![0] },
            PredictionSet { members: vec![0, 1] },
            PredictionSet { members: vec![1] },
        ];
        let y = LabelVector::new(vec![0, 1, 0], 2).unwrap();
        let report: CoverageReport<f64> = coverage_report(&sets, &y).unwrap();
        assert!((report.coverage - 2.0 / 3.0).abs() < 1e-12);
        assert!((report.mean_size - 4.0 / 3.0).abs() < 1e-12);
        assert_eq!(report.size_histogram, vec![0, 2, 1]);
    }

    #[test]
    fn empty_inputs_are_rejected() {
        let scores: Vec<f64> = vec![];
        assert!(conformal_quantile(&scores, 0.1, false).is_err());
        let y = LabelVector::new(vec![0], 2).unwrap();
        assert!(coverage_report::<f64>(&[], &y).is_err());
    }
}
