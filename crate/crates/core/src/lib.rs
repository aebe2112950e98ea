//! Model-agnostic calibration, uncertainty, and explanation toolkit for
//! probabilistic classifiers.
//!
//! The crate treats a trained classifier as a black box that emits logits or
//! class probabilities and provides the post-hoc layers around it:
//!
//! - **Calibration** ([`calibration`]): temperature scaling fit by
//!   minimizing validation NLL, plus reliability diagnostics — expected
//!   calibration error with bin detail and the multiclass Brier score
//!   ([`metrics`]).
//! - **Uncertainty** ([`uncertainty`]): predictive entropy, mutual
//!   information and disagreement over stochastic forward passes, entropy
//!   normalization, and evidential (Dirichlet) belief/uncertainty masses.
//! - **Conformal prediction** ([`conformal`]): split conformal label sets
//!   from sorted-probability scores with finite-sample coverage control.
//! - **Selective prediction** ([`selective`]): risk–coverage analysis and
//!   confidence thresholds that meet a target error rate on covered samples.
//! - **Explanations** ([`explain`]): perturbation-based superpixel
//!   attributions for any black-box oracle, repeat-stability intervals,
//!   saliency aggregation, and reliability-weighted saliency maps.
//! - **Oracles** ([`oracle`]): the black-box prediction protocol plus
//!   builtin oracles for fixtures and tests.
//!
//! All numerics are generic over [`scalar::Real`] (`f32` or `f64`);
//! `*64` aliases at the crate root pin the common double-precision choices.
//!
//! ```
//! use uqcal_core::calibration::fit_temperature;
//! use uqcal_core::prob::{LabelVector, LogitsMatrix};
//!
//! // Overconfident two-class logits: the fitted temperature softens them
//! // and never worsens the NLL.
//! let rows: Vec<f64> = (0..12)
//!     .flat_map(|i| if i % 3 == 0 { vec![0.0, 5.0] } else { vec![5.0, 0.0] })
//!     .collect();
//! let logits = LogitsMatrix::new(rows, 12, 2)?;
//! let labels = LabelVector::new((0..12).map(|i| usize::from(i % 2 == 0)).collect(), 2)?;
//! let fit = fit_temperature(&logits, &labels)?;
//! assert!(fit.nll_after <= fit.nll_before);
//! assert!(fit.temperature > 1.0); // softening, as expected for overconfidence
//! # Ok::<(), uqcal_core::Error>(())
//! ```

pub mod calibration;
pub mod conformal;
pub mod error;
pub mod explain;
pub mod metrics;
pub mod oracle;
pub mod prob;
pub mod saliency;
pub mod scalar;
pub mod selective;
pub mod uncertainty;

pub use error::{Error, Result};
pub use scalar::Real;

// Double-precision aliases for the pipeline-facing types.
pub type ProbabilityVector64 = prob::ProbabilityVector<f64>;
pub type ProbabilityMatrix64 = prob::ProbabilityMatrix<f64>;
pub type LogitsMatrix64 = prob::LogitsMatrix<f64>;
pub type PassStack64 = prob::PassStack<f64>;
pub type TemperatureFit64 = calibration::TemperatureFit<f64>;
pub type ReliabilityBins64 = metrics::ReliabilityBins<f64>;
pub type ClassificationReport64 = metrics::ClassificationReport<f64>;
pub type ConformalCalibration64 = conformal::ConformalCalibration<f64>;
pub type CoverageReport64 = conformal::CoverageReport<f64>;
pub type RiskCoverageCurve64 = selective::RiskCoverageCurve<f64>;
pub type SelectivePolicy64 = selective::SelectivePolicy<f64>;
pub type UncertaintyScores64 = uncertainty::UncertaintyScores<f64>;
pub type EvidentialOutput64 = uncertainty::EvidentialOutput<f64>;
pub type SaliencyMap64 = saliency::SaliencyMap<f64>;
pub type SaliencyStack64 = explain::SaliencyStack<f64>;
pub type Image64 = oracle::Image<f64>;
pub type LimeConfig64 = explain::LimeConfig<f64>;
pub type LimeExplanation64 = explain::LimeExplanation<f64>;
pub type LimeStability64 = explain::LimeStability<f64>;
