//! Temperature scaling: post-hoc calibration of classifier logits.
//!
//! A single positive temperature `T` rescales logits to `z / T` before the
//! softmax. Fitting minimizes the mean negative log-likelihood on held-out
//! calibration data over a clamped domain `[0.05, 20]`, using a geometric
//! presearch grid followed by golden-section refinement in log-temperature.
//! Dividing logits by a positive constant never changes the row argmax, so
//! calibrated probabilities preserve the original predictions.

use crate::error::{Error, Result};
use crate::prob::{softmax_slice, LabelVector, LogitsMatrix, ProbabilityMatrix};
use crate::scalar::{real, real_usize, Real};
use serde::Serialize;

/// Lower edge of the temperature search domain.
pub const TEMPERATURE_MIN: f64 = 0.05;
/// Upper edge of the temperature search domain.
pub const TEMPERATURE_MAX: f64 = 20.0;
/// Number of geometric presearch grid points.
const GRID_POINTS: usize = 50;
/// Golden-section convergence tolerance in log-temperature.
const LOG_TOLERANCE: f64 = 1e-4;
/// Below this sample count the fit is allowed but a warning is logged.
const SMALL_SAMPLE_WARNING: usize = 100;
/// Minimum number of samples accepted for a fit.
const MIN_SAMPLES: usize = 10;

/// Result of a temperature fit.
#[derive(Debug, Clone, Serialize)]
pub struct TemperatureFit<F: Real> {
    /// Fitted temperature, inside `[0.05, 20]`.
    pub temperature: F,
    /// Mean NLL at `T = 1` on the fitting data.
    pub nll_before: F,
    /// Mean NLL at the fitted temperature; never above `nll_before` because
    /// `T = 1` is always among the evaluated candidates.
    pub nll_after: F,
    /// Every `(temperature, nll)` evaluation in search order.
    pub search_trace: Vec<(F, F)>,
}

fn check_alignment<F: Real>(z: &LogitsMatrix<F>, y: &LabelVector) -> Result<()> {
    if z.n() != y.n() {
        return Err(Error::ShapeMismatch {
            detail: format!("{} logit rows but {} labels", z.n(), y.n()),
        });
    }
    if z.k() != y.k() {
        return Err(Error::ShapeMismatch {
            detail: format!("logits have {} classes but labels declare {}", z.k(), y.k()),
        });
    }
    Ok(())
}

fn check_temperature<F: Real>(t: F) -> Result<()> {
    if !t.is_finite() || t <= F::zero() {
        return Err(Error::InvalidParameter {
            name: "temperature",
            detail: format!("must be a finite positive real, got {t}"),
        });
    }
    Ok(())
}

/// Mean negative log-likelihood of labels under `softmax(z / t)`, computed
/// with a numerically stable log-sum-exp.
pub fn nll<F: Real>(z: &LogitsMatrix<F>, y: &LabelVector, t: F) -> Result<F> {
    check_alignment(z, y)?;
    check_temperature(t)?;
    let mut total = F::zero();
    for (row, &label) in z.rows().zip(y.as_slice()) {
        let mut max = row[0] / t;
        for &v in row {
            max = max.max(v / t);
        }
        let mut lse = F::zero();
        for &v in row {
            lse += (v / t - max).exp();
        }
        total += lse.ln() + max - row[label] / t;
    }
    Ok(total / real_usize::<F>(z.n()))
}

/// Softmax of `z / t`, row-wise.
pub fn apply_temperature<F: Real>(z: &LogitsMatrix<F>, t: F) -> Result<ProbabilityMatrix<F>> {
    check_temperature(t)?;
    let mut data = Vec::with_capacity(z.n() * z.k());
    let mut scaled = vec![F::zero(); z.k()];
    for row in z.rows() {
        for (s, &v) in scaled.iter_mut().zip(row) {
            *s = v / t;
        }
        data.extend_from_slice(&softmax_slice(&scaled));
    }
    Ok(ProbabilityMatrix::from_normalized(data, z.n(), z.k()))
}

/// Fits the temperature by NLL minimization over `[0.05, 20]`.
///
/// The search evaluates a 50-point geometric grid plus the fixed candidate
/// `T = 1`, then refines around the best grid point with golden-section
/// search on `ln T` to a `1e-4` log-space tolerance. The returned temperature
/// is the best point ever evaluated, so `nll_after <= nll_before` always
/// holds. Deterministic: identical inputs yield identical fits.
///
/// Requires at least 10 samples (a warning is logged below 100) and at least
/// two distinct labels.
pub fn fit_temperature<F: Real>(z: &LogitsMatrix<F>, y: &LabelVector) -> Result<TemperatureFit<F>> {
    check_alignment(z, y)?;
    if z.n() < MIN_SAMPLES {
        return Err(Error::InvalidParameter {
            name: "z",
            detail: format!(
                "temperature fit needs at least {MIN_SAMPLES} samples, got {}",
                z.n()
            ),
        });
    }
    if z.n() < SMALL_SAMPLE_WARNING {
        log::warn!(
            "temperature fit on only {} samples (< {SMALL_SAMPLE_WARNING}); the estimate may be noisy",
            z.n()
        );
    }
    if y.distinct() < 2 {
        return Err(Error::DegenerateLabels {
            detail: "temperature fit needs at least two distinct labels".into(),
        });
    }

    let mut trace: Vec<(F, F)> = Vec::new();
    let mut best_t = F::one();
    let mut best_nll = F::infinity();
    let mut evaluate = |t: F, trace: &mut Vec<(F, F)>| -> Result<F> {
        let value = nll(z, y, t)?;
        trace.push((t, value));
        if value < best_nll {
            best_nll = value;
            best_t = t;
        }
        Ok(value)
    };

    // Geometric presearch grid over the clamped domain.
    let log_lo = TEMPERATURE_MIN.ln();
    let log_hi = TEMPERATURE_MAX.ln();
    let mut grid_nll = [0.0f64; GRID_POINTS];
    let mut grid_best = 0usize;
    for i in 0..GRID_POINTS {
        let log_t = log_lo + (log_hi - log_lo) * i as f64 / (GRID_POINTS - 1) as f64;
        let value = evaluate(real::<F>(log_t.exp()), &mut trace)?;
        grid_nll[i] = value.to_f64().unwrap_or(f64::INFINITY);
        if grid_nll[i] < grid_nll[grid_best] {
            grid_best = i;
        }
    }
    // The identity temperature is always a candidate, so the fit can never
    // be worse than the uncalibrated model.
    let nll_before = evaluate(F::one(), &mut trace)?;

    // Golden-section refinement on ln T around the best grid point.
    let step = (log_hi - log_lo) / (GRID_POINTS - 1) as f64;
    let grid_log = |i: usize| log_lo + step * i as f64;
    let mut a = grid_log(grid_best.saturating_sub(1));
    let mut b = grid_log((grid_best + 1).min(GRID_POINTS - 1));
    let inv_phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut f1 = evaluate(real::<F>(x1.exp()), &mut trace)?.to_f64().unwrap_or(f64::INFINITY);
    let mut f2 = evaluate(real::<F>(x2.exp()), &mut trace)?.to_f64().unwrap_or(f64::INFINITY);
    while b - a > LOG_TOLERANCE {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = evaluate(real::<F>(x1.exp()), &mut trace)?.to_f64().unwrap_or(f64::INFINITY);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = evaluate(real::<F>(x2.exp()), &mut trace)?.to_f64().unwrap_or(f64::INFINITY);
        }
    }
    evaluate(real::<F>(((a + b) / 2.0).exp()), &mut trace)?;

    Ok(TemperatureFit {
        temperature: best_t,
        nll_before,
        nll_after: best_nll,
        search_trace: trace,
    })
}
