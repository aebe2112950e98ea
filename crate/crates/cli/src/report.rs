//! Evaluation report assembly: the `report.json` sections, the per-sample
//! decisions CSV, and the policy-application helper shared with the
//! selective command.
//!
//! Section structs serialize in declaration order, so the JSON layout is
//! stable. Every top-level reporting category is always present: computed
//! sections carry values, `explainability` is explicitly marked out of
//! scope for this command (the explain command produces those artifacts),
//! and `quality_score` is a reserved field that nothing computes.

use crate::error::{CliError, Result};
use crate::fsio::fmt_f64;
use serde::Serialize;
use uqcal_core::conformal::{CoverageReport, PredictionSet};
use uqcal_core::metrics::{ClassificationReport, ReliabilityBins, StratumReport};
use uqcal_core::prob::{LabelVector, ProbabilityMatrix};
use uqcal_core::selective::{
    selective_decide, Decision, DecisionReason, RiskCoveragePoint, SelectiveDecision,
    SelectivePolicy,
};

#[derive(Debug, Clone, Serialize)]
pub struct AccuracySection {
    pub n_evaluation: usize,
    pub top1_accuracy: f64,
    pub macro_f1: f64,
    pub per_class_sensitivity: Vec<Option<f64>>,
    pub per_class_specificity: Vec<Option<f64>>,
    pub confusion_matrix: Vec<Vec<usize>>,
}

impl AccuracySection {
    pub fn from_report(n_evaluation: usize, r: &ClassificationReport<f64>) -> Self {
        Self {
            n_evaluation,
            top1_accuracy: r.top1_accuracy,
            macro_f1: r.macro_f1,
            per_class_sensitivity: r.per_class_sensitivity.clone(),
            per_class_specificity: r.per_class_specificity.clone(),
            confusion_matrix: r.confusion.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NominalCoverage {
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConformalSection {
    pub alpha: f64,
    pub qhat: f64,
    pub n_calibration: usize,
    pub randomized: bool,
    /// Fraction of evaluation prediction sets containing the true label.
    pub set_coverage: f64,
    pub mean_set_size: f64,
    pub size_histogram: Vec<usize>,
    /// Fraction of randomized evaluation scores at or below `qhat`; present
    /// only for randomized runs. This is the quantity the split-conformal
    /// exchangeability argument pins near `1 - alpha`, while deterministic
    /// never-empty sets may overcover.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub randomized_rule_coverage: Option<f64>,
    /// Guaranteed marginal coverage band for the set-threshold event.
    pub nominal_coverage: NominalCoverage,
}

#[derive(Debug, Clone, Serialize)]
pub struct UncertaintySummary {
    pub mean_entropy: f64,
    pub mean_mutual_information: f64,
    pub mean_disagreement: f64,
    pub t_passes: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationSection {
    pub ece: f64,
    pub brier: f64,
    /// `"temperature_scaling"` when an artifact was applied, else `"none"`.
    pub method: String,
    pub temperature: Option<f64>,
    pub reliability_bins: ReliabilityBins<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub uncertainty: Option<UncertaintySummary>,
    pub conformal: ConformalSection,
}

#[derive(Debug, Clone, Serialize)]
pub struct PolicyFit {
    pub achieved_risk: Option<f64>,
    pub abstention_rate: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SelectiveSection {
    pub target_risk: f64,
    /// Confidence threshold fit on the calibration split; absent when the
    /// policy abstains on everything.
    pub threshold: Option<f64>,
    /// Risk among accepted evaluation samples (absent when none accepted).
    pub achieved_risk: Option<f64>,
    pub abstention_rate: f64,
    pub coverage: f64,
    pub aurc: f64,
    /// How the policy performed on the split it was fit on.
    pub calibration_fit: PolicyFit,
    /// Full evaluation-split risk-coverage curve.
    pub curve: Vec<RiskCoveragePoint<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OutOfScopeSection {
    pub status: String,
    pub note: String,
}

impl OutOfScopeSection {
    pub fn new(note: &str) -> Self {
        Self { status: "out_of_scope".into(), note: note.into() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReservedSection {
    pub status: String,
    pub note: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct WorkflowSection {
    /// What happens to low-confidence predictions.
    pub low_confidence_action: String,
    /// Artifact holding the per-sample decisions.
    pub decisions_csv: String,
    pub accepted: usize,
    pub escalated: usize,
    pub abstention_rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StratumSummary {
    pub key: String,
    pub n: usize,
    pub low_support: bool,
    pub top1_accuracy: f64,
    pub macro_f1: f64,
    pub ece: f64,
    pub brier: f64,
    /// Conformal set coverage within the stratum.
    pub set_coverage: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StratifiedSection {
    pub group_by: Option<String>,
    pub strata: Vec<StratumSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Conventions {
    pub brier: String,
    pub ece_bins: usize,
    pub confidence: String,
    pub coverage: String,
}

impl Conventions {
    pub fn new(ece_bins: usize) -> Self {
        Self {
            brier: "multiclass sum convention: sum of squared gaps to the one-hot label; \
                    range [0, 2]"
                .into(),
            ece_bins,
            confidence: "top-1 probability of the (calibrated) predictive distribution".into(),
            coverage: "fraction of evaluation prediction sets containing the true label".into(),
        }
    }
}

/// The full `report.json` document.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub accuracy: AccuracySection,
    pub calibration: CalibrationSection,
    pub selective_prediction: SelectiveSection,
    pub explainability: OutOfScopeSection,
    pub workflow: WorkflowSection,
    pub quality_score: ReservedSection,
    pub stratified: StratifiedSection,
    pub conventions: Conventions,
    pub provenance: crate::provenance::Provenance,
}

impl Report {
    pub fn reserved_quality_score() -> ReservedSection {
        ReservedSection {
            status: "not_computed".into(),
            note: "no image-quality score is defined; the field is reserved for an \
                   externally supplied value"
                .into(),
        }
    }
}

/// Outcome of applying a fitted policy to a split.
pub struct PolicyApplication {
    pub decisions: Vec<SelectiveDecision>,
    pub achieved_risk: Option<f64>,
    pub abstention_rate: f64,
    pub coverage: f64,
    pub accepted: usize,
    pub escalated: usize,
}

/// Applies a confidence-threshold policy to every sample of a split.
pub fn apply_policy(
    probs: &ProbabilityMatrix<f64>,
    labels: &LabelVector,
    policy: &SelectivePolicy<f64>,
) -> PolicyApplication {
    let n = probs.n();
    let mut decisions = Vec::with_capacity(n);
    let mut accepted = 0usize;
    let mut accepted_errors = 0usize;
    for i in 0..n {
        let d = selective_decide(probs.confidence_row(i), policy);
        if d.decision == Decision::Accept {
            accepted += 1;
            if probs.argmax_row(i) != labels.as_slice()[i] {
                accepted_errors += 1;
            }
        }
        decisions.push(d);
    }
    let escalated = n - accepted;
    PolicyApplication {
        decisions,
        achieved_risk: (accepted > 0).then(|| accepted_errors as f64 / accepted as f64),
        abstention_rate: escalated as f64 / n as f64,
        coverage: accepted as f64 / n as f64,
        accepted,
        escalated,
    }
}

pub fn decision_str(d: Decision) -> &'static str {
    match d {
        Decision::Accept => "accept",
        Decision::Escalate => "escalate",
    }
}

pub fn reason_str(r: DecisionReason) -> &'static str {
    match r {
        DecisionReason::ConfidenceAtOrAboveThreshold => "confidence_at_or_above_threshold",
        DecisionReason::ConfidenceBelowThreshold => "confidence_below_threshold",
        DecisionReason::AbstainAllPolicy => "abstain_all_policy",
    }
}

/// Serializes the per-sample decisions CSV. `sets` is empty for commands
/// that computed no prediction sets; then the set columns stay blank.
pub fn decisions_csv(
    sample_ids: &[&str],
    labels: &LabelVector,
    probs: &ProbabilityMatrix<f64>,
    decisions: &[SelectiveDecision],
    sets: &[PredictionSet],
) -> Result<Vec<u8>> {
    let n = labels.n();
    if sample_ids.len() != n || probs.n() != n || decisions.len() != n {
        return Err(CliError::computation(format!(
            "decision table misalignment: {} ids, {} labels, {} rows, {} decisions",
            sample_ids.len(),
            n,
            probs.n(),
            decisions.len()
        )));
    }
    if !sets.is_empty() && sets.len() != n {
        return Err(CliError::computation(format!(
            "{} prediction sets for {n} samples",
            sets.len()
        )));
    }
    let mut writer = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| CliError::computation(format!("decisions CSV: {e}"));
    writer
        .write_record([
            "sample_id",
            "label",
            "prediction",
            "confidence",
            "decision",
            "reason",
            "set_size",
            "set_members",
            "in_set",
        ])
        .map_err(to_err)?;
    for i in 0..n {
        let label = labels.as_slice()[i];
        let (set_size, set_members, in_set) = if sets.is_empty() {
            (String::new(), String::new(), String::new())
        } else {
            let set = &sets[i];
            let members: Vec<String> = set.members.iter().map(|c| c.to_string()).collect();
            (
                set.size().to_string(),
                members.join("|"),
                set.contains(label).to_string(),
            )
        };
        writer
            .write_record([
                sample_ids[i],
                &label.to_string(),
                &probs.argmax_row(i).to_string(),
                &fmt_f64(probs.confidence_row(i)),
                decision_str(decisions[i].decision),
                reason_str(decisions[i].reason),
                &set_size,
                &set_members,
                &in_set,
            ])
            .map_err(to_err)?;
    }
    writer
        .into_inner()
        .map_err(|e| CliError::computation(format!("decisions CSV: {e}")))
}

/// Per-stratum summary rows, combining the stratified metrics with
/// conformal coverage inside each stratum.
pub fn stratified_summaries(
    reports: &[StratumReport<f64>],
    groups: &[String],
    sets: &[PredictionSet],
    labels: &LabelVector,
) -> Vec<StratumSummary> {
    reports
        .iter()
        .map(|r| {
            let mut covered = 0usize;
            let mut n = 0usize;
            for (i, g) in groups.iter().enumerate() {
                if *g == r.key {
                    n += 1;
                    if sets[i].contains(labels.as_slice()[i]) {
                        covered += 1;
                    }
                }
            }
            StratumSummary {
                key: r.key.clone(),
                n: r.n,
                low_support: r.low_support,
                top1_accuracy: r.report.top1_accuracy,
                macro_f1: r.report.macro_f1,
                ece: r.ece,
                brier: r.brier,
                set_coverage: covered as f64 / n.max(1) as f64,
            }
        })
        .collect()
}

/// Builds the conformal section from the calibrated threshold and the
/// evaluation-split summary.
pub fn conformal_section(
    cal: &uqcal_core::conformal::ConformalCalibration<f64>,
    coverage: &CoverageReport<f64>,
    randomized_rule_coverage: Option<f64>,
) -> ConformalSection {
    let (lower, upper) = uqcal_core::conformal::nominal_coverage_bounds(cal);
    ConformalSection {
        alpha: cal.alpha,
        qhat: cal.qhat,
        n_calibration: cal.n_cal,
        randomized: cal.randomized,
        set_coverage: coverage.coverage,
        mean_set_size: coverage.mean_size,
        size_histogram: coverage.size_histogram.clone(),
        randomized_rule_coverage,
        nominal_coverage: NominalCoverage { lower, upper },
    }
}
