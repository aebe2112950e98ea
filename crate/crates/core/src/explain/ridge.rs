//! Weighted ridge regression via Cholesky factorization.
//!
//! Solves `argmin_{b0, b} sum_i w_i (y_i - b0 - x_i . b)^2 + lambda |b|^2`
//! with an unpenalized intercept, by forming the normal equations
//! `(X'WX + L) beta = X'Wy` where `X = [1 | features]` and
//! `L = diag(0, lambda, ..., lambda)`, then factoring the system matrix.
//! With strictly positive weights and `lambda > 0` the matrix is symmetric
//! positive definite, so the factorization cannot fail on valid input.

use crate::error::{Error, Result};
use crate::scalar::{real, Real};

/// Result of a weighted ridge fit.
#[derive(Debug, Clone)]
pub(crate) struct RidgeFit<F: Real> {
    pub intercept: F,
    pub coefficients: Vec<F>,
    /// Weighted coefficient of determination of the fit, clamped to `[0, 1]`.
    pub r2: F,
}

/// Fits the weighted ridge model. `features` is row-major `n x s`.
pub(crate) fn weighted_ridge<F: Real>(
    features: &[F],
    y: &[F],
    weights: &[F],
    n: usize,
    s: usize,
    lambda: F,
) -> Result<RidgeFit<F>> {
    if n == 0 || s == 0 {
        return Err(Error::Empty {
            what: "ridge design matrix".into(),
        });
    }
    if features.len() != n * s || y.len() != n || weights.len() != n {
        return Err(Error::ShapeMismatch {
            detail: format!(
                "ridge fit with {} feature values, {} targets, {} weights for n = {n}, s = {s}",
                features.len(),
                y.len(),
                weights.len()
            ),
        });
    }
    if !lambda.is_finite() || lambda < F::zero() {
        return Err(Error::InvalidParameter {
            name: "lambda",
            detail: format!("ridge penalty must be finite and non-negative, got {lambda}"),
        });
    }
    for (i, &w) in weights.iter().enumerate() {
        if !w.is_finite() || w <= F::zero() {
            return Err(Error::InvalidParameter {
                name: "weights",
                detail: format!("sample weight {i} = {w} must be finite and positive"),
            });
        }
    }

    // Normal equations over the augmented design [1 | features].
    let dim = s + 1;
    let mut a = vec![F::zero(); dim * dim];
    let mut b = vec![F::zero(); dim];
    for i in 0..n {
        let w = weights[i];
        let row = &features[i * s..(i + 1) * s];
        // Intercept block.
        a[0] += w;
        b[0] += w * y[i];
        for p in 0..s {
            let xp = w * row[p];
            a[p + 1] += xp; // column 0 of row p+1 (symmetric fill below)
            b[p + 1] += xp * y[i];
            for q in p..s {
                a[(p + 1) * dim + (q + 1)] += xp * row[q];
            }
        }
    }
    // Mirror the symmetric entries and add the penalty (not on the intercept).
    for p in 1..dim {
        a[p * dim] = a[p];
        a[p * dim + p] += lambda;
        for q in (p + 1)..dim {
            a[q * dim + p] = a[p * dim + q];
        }
    }

    let beta = cholesky_solve(&a, &b, dim)?;
    check_residual(&a, &beta, &b, dim)?;

    // Weighted R^2 against the weighted-mean baseline.
    let w_sum: F = weights.iter().copied().sum();
    let y_mean = b[0] / w_sum;
    let mut ss_tot = F::zero();
    let mut rss = F::zero();
    for i in 0..n {
        let row = &features[i * s..(i + 1) * s];
        let mut pred = beta[0];
        for p in 0..s {
            pred += beta[p + 1] * row[p];
        }
        let d_tot = y[i] - y_mean;
        let d_res = y[i] - pred;
        ss_tot += weights[i] * d_tot * d_tot;
        rss += weights[i] * d_res * d_res;
    }
    let r2 = if ss_tot <= real::<F>(1e-12) {
        // Constant target: the unpenalized intercept reproduces it exactly.
        F::one()
    } else {
        (F::one() - rss / ss_tot).max(F::zero()).min(F::one())
    };

    Ok(RidgeFit {
        intercept: beta[0],
        coefficients: beta[1..].to_vec(),
        r2,
    })
}

/// Solves `A x = b` for symmetric positive definite `A` (row-major
/// `dim x dim`) by Cholesky factorization with forward/back substitution.
fn cholesky_solve<F: Real>(a: &[F], b: &[F], dim: usize) -> Result<Vec<F>> {
    let mut l = vec![F::zero(); dim * dim];
    for j in 0..dim {
        let mut diag = a[j * dim + j];
        for k in 0..j {
            diag -= l[j * dim + k] * l[j * dim + k];
        }
        if !(diag > F::zero()) || !diag.is_finite() {
            return Err(Error::Solve {
                detail: format!("system matrix is not positive definite at pivot {j}"),
            });
        }
        let root = diag.sqrt();
        l[j * dim + j] = root;
        for i in (j + 1)..dim {
            let mut v = a[i * dim + j];
            for k in 0..j {
                v -= l[i * dim + k] * l[j * dim + k];
            }
            l[i * dim + j] = v / root;
        }
    }
    // L z = b.
    let mut z = vec![F::zero(); dim];
    for i in 0..dim {
        let mut v = b[i];
        for k in 0..i {
            v -= l[i * dim + k] * z[k];
        }
        z[i] = v / l[i * dim + i];
    }
    // L' x = z.
    let mut x = vec![F::zero(); dim];
    for i in (0..dim).rev() {
        let mut v = z[i];
        for k in (i + 1)..dim {
            v -= l[k * dim + i] * x[k];
        }
        x[i] = v / l[i * dim + i];
    }
    Ok(x)
}

/// Confirms the solve actually satisfied the normal equations.
fn check_residual<F: Real>(a: &[F], x: &[F], b: &[F], dim: usize) -> Result<()> {
    // Absolute tolerance at f64 precision, loosened proportionally for
    // wider-epsilon scalar types, relative to the right-hand-side scale.
    let eps_ratio = F::epsilon().to_f64().expect("epsilon fits in f64") / f64::EPSILON;
    let tol = real::<F>(1e-8 * eps_ratio);
    let scale = b
        .iter()
        .fold(F::one(), |acc, &v| acc.max(v.abs()));
    for i in 0..dim {
        let mut r = -b[i];
        for j in 0..dim {
            r += a[i * dim + j] * x[j];
        }
        if !(r.abs() <= tol * scale) {
            return Err(Error::Solve {
                detail: format!("solution residual {r} exceeds tolerance at row {i}"),
            });
        }
    }
    Ok(())
}
