//! Per-sample uncertainty scores from probabilities and pass stacks.
//!
//! All entropies are natural-log entropies (nats). The three stack-based
//! scores follow the usual decomposition: predictive entropy of the mean
//! probability (total), mutual information between prediction and passes
//! (epistemic, BALD-style), and the plurality-vote disagreement rate.

use crate::error::{Error, Result};
use crate::prob::{argmax, PassStack, ProbabilityMatrix, ProbabilityVector};
use crate::scalar::{real, real_usize, Real};
use serde::Serialize;

/// Slack applied to analytic bounds before declaring a violation, so that
/// values off by accumulated rounding are clamped instead of rejected.
const BOUND_SLACK: f64 = 1e-9;

fn entropy_slice<F: Real>(p: &[F]) -> F {
    let mut h = F::zero();
    for &v in p {
        if v > F::zero() {
            h -= v * v.ln();
        }
    }
    h
}

/// Predictive entropy `H(p) = -sum_k p_k ln p_k` in nats, with `0 ln 0 = 0`.
///
/// Always lies in `[0, ln K]` for a valid probability vector.
pub fn predictive_entropy<F: Real>(p: &ProbabilityVector<F>) -> F {
    entropy_slice(p.as_slice())
}

/// Predictive entropy of every row of a probability matrix.
pub fn predictive_entropy_matrix<F: Real>(p: &ProbabilityMatrix<F>) -> Vec<F> {
    p.rows().map(entropy_slice).collect()
}

/// Per-sample mutual information between the prediction and the passes:
/// `H(mean_t p_t) - (1/T) sum_t H(p_t)`.
///
/// Requires at least two passes. Analytically non-negative and bounded by the
/// predictive entropy of the mean; small negative rounding residues are
/// clamped to zero.
pub fn mutual_information<F: Real>(stack: &PassStack<F>) -> Result<Vec<F>> {
    if stack.t() < 2 {
        return Err(Error::InvalidParameter {
            name: "stack",
            detail: format!(
                "mutual information needs at least 2 passes, got {}",
                stack.t()
            ),
        });
    }
    let t_weight = F::one() / real_usize::<F>(stack.t());
    let mean = stack.mean_probability();
    let mut out = Vec::with_capacity(stack.n());
    for n in 0..stack.n() {
        let total = entropy_slice(mean.row(n));
        let mut expected = F::zero();
        for t in 0..stack.t() {
            expected += entropy_slice(&stack.probability_row(t, n)) * t_weight;
        }
        let mi = total - expected;
        debug_assert!(
            mi > -real::<F>(BOUND_SLACK),
            "mutual information {mi} below the rounding slack"
        );
        out.push(mi.max(F::zero()));
    }
    Ok(out)
}

/// Per-sample plurality-vote disagreement: `1 - plurality_count / T`, where
/// each pass votes for its argmax class (ties toward the lowest index).
///
/// Zero when every pass votes identically.
pub fn disagreement<F: Real>(stack: &PassStack<F>) -> Vec<F> {
    let t_count = real_usize::<F>(stack.t());
    let mut out = Vec::with_capacity(stack.n());
    let mut votes = vec![0usize; stack.k()];
    for n in 0..stack.n() {
        votes.iter_mut().for_each(|v| *v = 0);
        for t in 0..stack.t() {
            votes[argmax(stack.row(t, n))] += 1;
        }
        let plurality = *votes.iter().max().expect("k >= 2");
        out.push(F::one() - real_usize::<F>(plurality) / t_count);
    }
    out
}

/// Rescales entropies into `[0, 1]` by dividing by `ln K`.
///
/// Entries must already lie in `[0, ln K]`; values beyond that bound by more
/// than rounding slack are a validation error.
pub fn normalize_uncertainty<F: Real>(entropy: &[F], k: usize) -> Result<Vec<F>> {
    if k < 2 {
        return Err(Error::InvalidParameter {
            name: "k",
            detail: format!("normalization needs at least 2 classes, got {k}"),
        });
    }
    let ln_k = real_usize::<F>(k).ln();
    let slack = real::<F>(BOUND_SLACK);
    let mut out = Vec::with_capacity(entropy.len());
    for (idx, &h) in entropy.iter().enumerate() {
        if !h.is_finite() || h < -slack || h > ln_k + slack {
            return Err(Error::InvalidParameter {
                name: "entropy",
                detail: format!("entry {idx} = {h} outside [0, ln {k}] = [0, {ln_k}]"),
            });
        }
        out.push((h / ln_k).max(F::zero()).min(F::one()));
    }
    Ok(out)
}

/// Subjective-logic mapping of Dirichlet concentration parameters.
#[derive(Debug, Clone, Serialize)]
pub struct EvidentialOutput<F: Real> {
    /// Per-class belief masses `(alpha - 1) / S`, row-major `N x K`.
    pub belief: Vec<F>,
    /// Per-sample vacuity mass `K / S`, length `N`.
    pub u_mass: Vec<F>,
    /// Per-sample expected probabilities `alpha / S`.
    #[serde(skip)]
    pub expected_p: ProbabilityMatrix<F>,
}

/// Maps an `N x K` matrix of Dirichlet concentration parameters (all >= 1)
/// to belief masses, vacuity, and expected probabilities.
///
/// With `S = sum_k alpha_k` per row: `belief = (alpha - 1) / S`,
/// `u_mass = K / S`, `expected_p = alpha / S`; belief row sum plus vacuity
/// equals 1 by construction.
pub fn evidential_map<F: Real>(alpha: &[F], n: usize, k: usize) -> Result<EvidentialOutput<F>> {
    if n == 0 {
        return Err(Error::Empty {
            what: "evidential concentration matrix".into(),
        });
    }
    if k < 2 {
        return Err(Error::ShapeMismatch {
            detail: format!("evidential mapping needs at least 2 classes, got {k}"),
        });
    }
    if alpha.len() != n * k {
        return Err(Error::ShapeMismatch {
            detail: format!(
                "concentration buffer length {} does not equal n*k = {}",
                alpha.len(),
                n * k
            ),
        });
    }
    for (idx, &a) in alpha.iter().enumerate() {
        let (sample, class) = (idx / k, idx % k);
        if !a.is_finite() {
            return Err(Error::NonFinite {
                what: format!("concentration at sample {sample}, class {class}"),
            });
        }
        if a < F::one() {
            return Err(Error::EvidentialAlpha {
                sample,
                class,
                value: a.to_f64().unwrap_or(f64::NAN),
            });
        }
    }
    let k_real = real_usize::<F>(k);
    let mut belief = Vec::with_capacity(n * k);
    let mut u_mass = Vec::with_capacity(n);
    let mut expected = Vec::with_capacity(n * k);
    for row in alpha.chunks(k) {
        let s: F = row.iter().copied().sum();
        for &a in row {
            belief.push((a - F::one()) / s);
            expected.push(a / s);
        }
        u_mass.push(k_real / s);
    }
    Ok(EvidentialOutput {
        belief,
        u_mass,
        expected_p: ProbabilityMatrix::new(expected, n, k)?,
    })
}

/// Bundle of per-sample uncertainty scores derived from one pass stack.
#[derive(Debug, Clone, Serialize)]
pub struct UncertaintyScores<F: Real> {
    /// Predictive entropy of the mean probability, in nats.
    pub entropy: Vec<F>,
    /// Mutual information between prediction and passes, in nats.
    pub mutual_information: Vec<F>,
    /// Plurality-vote disagreement rate.
    pub disagreement: Vec<F>,
    /// Entropy rescaled into `[0, 1]` by `ln K`.
    pub normalized: Vec<F>,
}

impl<F: Real> UncertaintyScores<F> {
    /// Computes all four scores from a pass stack (requires `T >= 2`).
    pub fn from_stack(stack: &PassStack<F>) -> Result<Self> {
        let mean = stack.mean_probability();
        let entropy = predictive_entropy_matrix(&mean);
        let mutual_information = mutual_information(stack)?;
        let disagreement = disagreement(stack);
        let normalized = normalize_uncertainty(&entropy, stack.k())?;
        Ok(Self {
            entropy,
            mutual_information,
            disagreement,
            normalized,
        })
    }
}
