//! Selective prediction: risk-coverage analysis and abstention policies.
//!
//! Samples are ranked by confidence (descending, ties broken by original
//! index). Accepting the top `k` samples yields coverage `k / N` and risk
//! equal to the error rate inside that prefix. The area under the
//! risk-coverage curve (AURC) is the mean of the prefix risks. A policy picks
//! the confidence threshold of the maximum-coverage prefix whose risk stays
//! within a target; when no prefix qualifies the policy abstains on
//! everything, which is reported explicitly rather than silently.

use crate::error::{Error, Result};
use crate::scalar::{real_usize, Real};
use serde::Serialize;

/// One prefix of the confidence ranking.
#[derive(Debug, Clone, Serialize)]
pub struct RiskCoveragePoint<F: Real> {
    /// Fraction of samples accepted (`k / N`).
    pub coverage: F,
    /// Error rate among accepted samples.
    pub risk: F,
    /// Confidence of the last accepted sample; accepting at this threshold
    /// (inclusive) reproduces the prefix when confidences are distinct.
    pub threshold: F,
}

/// Full risk-coverage curve plus its area.
#[derive(Debug, Clone, Serialize)]
pub struct RiskCoverageCurve<F: Real> {
    /// One point per prefix length `k = 1..=N`, in increasing coverage order.
    pub points: Vec<RiskCoveragePoint<F>>,
    /// Mean of the prefix risks.
    pub aurc: F,
}

/// An abstention policy derived from a risk-coverage curve.
///
/// `threshold` is `None` exactly when the policy abstains on everything
/// (no prefix met the target risk); then `abstention_rate` is 1.
#[derive(Debug, Clone, Serialize)]
pub struct SelectivePolicy<F: Real> {
    /// Accept samples with confidence at or above this value.
    pub threshold: Option<F>,
    /// The risk level the policy was asked to respect.
    pub target_risk: F,
    /// Risk of the chosen prefix; `None` when abstaining on everything.
    pub achieved_risk: Option<F>,
    /// `1 - coverage` of the chosen prefix (1 when abstaining on everything).
    pub abstention_rate: F,
    /// Coverage of the chosen prefix (0 when abstaining on everything).
    pub coverage: F,
}

/// Outcome of applying a policy to one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    /// The prediction is accepted for automated use.
    Accept,
    /// The sample is routed to a human or a fallback path.
    Escalate,
}

/// Machine-readable reason for a decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionReason {
    /// Confidence reached the policy threshold (boundary inclusive).
    ConfidenceAtOrAboveThreshold,
    /// Confidence fell below the policy threshold.
    ConfidenceBelowThreshold,
    /// The policy abstains on every sample.
    AbstainAllPolicy,
}

/// A decision together with its reason code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SelectiveDecision {
    pub decision: Decision,
    pub reason: DecisionReason,
}

/// Computes the risk-coverage curve and AURC for per-sample confidences and
/// correctness indicators.
pub fn risk_coverage_curve<F: Real>(
    confidence: &[F],
    correct: &[bool],
) -> Result<RiskCoverageCurve<F>> {
    if confidence.is_empty() {
        return Err(Error::Empty {
            what: "risk-coverage inputs".into(),
        });
    }
    if confidence.len() != correct.len() {
        return Err(Error::ShapeMismatch {
            detail: format!(
                "{} confidences but {} correctness flags",
                confidence.len(),
                correct.len()
            ),
        });
    }
    for (i, &c) in confidence.iter().enumerate() {
        if !c.is_finite() {
            return Err(Error::NonFinite {
                what: format!("confidence {i}"),
            });
        }
    }
    let n = confidence.len();
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort by descending confidence keeps ties in original index order.
    order.sort_by(|&a, &b| {
        confidence[b]
            .partial_cmp(&confidence[a])
            .expect("confidences checked finite")
    });
    let n_real = real_usize::<F>(n);
    let mut errors = 0usize;
    let mut points = Vec::with_capacity(n);
    let mut risk_sum = F::zero();
    for (rank, &i) in order.iter().enumerate() {
        if !correct[i] {
            errors += 1;
        }
        let accepted = rank + 1;
        let risk = real_usize::<F>(errors) / real_usize::<F>(accepted);
        risk_sum += risk;
        points.push(RiskCoveragePoint {
            coverage: real_usize::<F>(accepted) / n_real,
            risk,
            threshold: confidence[i],
        });
    }
    Ok(RiskCoverageCurve {
        points,
        aurc: risk_sum / n_real,
    })
}

/// Chooses the maximum-coverage point of the curve whose risk does not exceed
/// `target_risk`. When no point qualifies the returned policy abstains on
/// every sample (threshold `None`, abstention rate 1).
pub fn threshold_for_target_risk<F: Real>(
    curve: &RiskCoverageCurve<F>,
    target_risk: F,
) -> Result<SelectivePolicy<F>> {
    if !target_risk.is_finite() || target_risk < F::zero() || target_risk > F::one() {
        return Err(Error::InvalidParameter {
            name: "target_risk",
            detail: format!("must lie in [0, 1], got {target_risk}"),
        });
    }
    let mut chosen: Option<&RiskCoveragePoint<F>> = None;
    for point in &curve.points {
        if point.risk <= target_risk {
            // Points come in increasing coverage order, so the last feasible
            // point is the maximum-coverage one.
            chosen = Some(point);
        }
    }
    Ok(match chosen {
        Some(point) => SelectivePolicy {
            threshold: Some(point.threshold),
            target_risk,
            achieved_risk: Some(point.risk),
            abstention_rate: F::one() - point.coverage,
            coverage: point.coverage,
        },
        None => SelectivePolicy {
            threshold: None,
            target_risk,
            achieved_risk: None,
            abstention_rate: F::one(),
            coverage: F::zero(),
        },
    })
}

/// Applies a policy to one confidence value. The threshold boundary accepts.
pub fn selective_decide<F: Real>(confidence: F, policy: &SelectivePolicy<F>) -> SelectiveDecision {
    match policy.threshold {
        None => SelectiveDecision {
            decision: Decision::Escalate,
            reason: DecisionReason::AbstainAllPolicy,
        },
        Some(threshold) if confidence >= threshold => SelectiveDecision {
            decision: Decision::Accept,
            reason: DecisionReason::ConfidenceAtOrAboveThreshold,
        },
        Some(_) => SelectiveDecision {
            decision: Decision::Escalate,
            reason: DecisionReason::ConfidenceBelowThreshold,
        },
    }
}
