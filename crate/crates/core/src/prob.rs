//! Probability-simplex and logit containers.
//!
//! Every probability row ingested by this crate is validated against the
//! simplex within a fixed tolerance and then renormalized (divided by its
//! sum), so downstream routines can rely on rows summing to one up to
//! floating-point rounding. Logit containers only require finiteness.
//!
//! Conventions used across the crate:
//! - rows are stored row-major (`n * k + j` addressing);
//! - argmax ties are broken toward the lowest class index;
//! - all logarithms elsewhere in the crate are natural logarithms.

use crate::error::{Error, Result};
use crate::scalar::{real, real_usize, Real};

/// Absolute tolerance for simplex validation: each entry must lie in
/// `[-SIMPLEX_TOLERANCE, 1 + SIMPLEX_TOLERANCE]` and each row sum within
/// `SIMPLEX_TOLERANCE` of 1 before renormalization.
pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

/// Index of the largest entry, ties broken toward the lowest index.
pub(crate) fn argmax<F: Real>(row: &[F]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Validates one probability row in place: finiteness, entry bounds, row sum;
/// then clamps entries into `[0, 1]` and divides by the post-clamp sum.
fn normalize_simplex_row<F: Real>(row: &mut [F], row_index: usize) -> Result<()> {
    let lo = -real::<F>(SIMPLEX_TOLERANCE);
    let hi = F::one() + real::<F>(SIMPLEX_TOLERANCE);
    for (j, v) in row.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                what: format!("probability row {row_index}, entry {j}"),
            });
        }
        if *v < lo || *v > hi {
            return Err(Error::Simplex {
                row: row_index,
                detail: format!("entry {j} = {v} outside [0, 1] beyond tolerance {SIMPLEX_TOLERANCE:e}"),
            });
        }
    }
    for v in row.iter_mut() {
        *v = v.max(F::zero()).min(F::one());
    }
    let sum: F = row.iter().copied().sum();
    let dev = (sum - F::one()).abs();
    if dev > real::<F>(SIMPLEX_TOLERANCE) {
        return Err(Error::Simplex {
            row: row_index,
            detail: format!("row sum {sum} deviates from 1 beyond tolerance {SIMPLEX_TOLERANCE:e}"),
        });
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
    Ok(())
}

/// A single probability distribution over `K >= 2` classes.
///
/// Construction validates the simplex constraints and renormalizes, so a
/// value of this type always has entries in `[0, 1]` summing to 1 up to
/// floating-point rounding.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector<F: Real> {
    p: Vec<F>,
}

impl<F: Real> ProbabilityVector<F> {
    /// Validates and renormalizes a probability row.
    pub fn new(mut p: Vec<F>) -> Result<Self> {
        if p.len() < 2 {
            return Err(Error::ShapeMismatch {
                detail: format!("probability vector needs at least 2 classes, got {}", p.len()),
            });
        }
        normalize_simplex_row(&mut p, 0)?;
        Ok(Self { p })
    }

    /// Uniform distribution over `k` classes.
    pub fn uniform(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::ShapeMismatch {
                detail: format!("probability vector needs at least 2 classes, got {k}"),
            });
        }
        let w = F::one() / real_usize::<F>(k);
        Ok(Self { p: vec![w; k] })
    }

    /// Number of classes.
    pub fn k(&self) -> usize {
        self.p.len()
    }

    /// Entries as a slice.
    pub fn as_slice(&self) -> &[F] {
        &self.p
    }

    /// Index of the most probable class (ties toward the lowest index).
    pub fn argmax(&self) -> usize {
        argmax(&self.p)
    }

    /// Largest entry (the confidence of the argmax class).
    pub fn confidence(&self) -> F {
        self.p[self.argmax()]
    }

    /// Consumes the vector, returning the underlying entries.
    pub fn into_vec(self) -> Vec<F> {
        self.p
    }

    /// Internal constructor for rows already normalized by this crate.
    pub(crate) fn from_normalized(p: Vec<F>) -> Self {
        debug_assert!(p.len() >= 2);
        Self { p }
    }
}

/// `N x K` matrix of probability rows (row-major), each validated and
/// renormalized on construction. `N >= 1`, `K >= 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMatrix<F: Real> {
    data: Vec<F>,
    n: usize,
    k: usize,
}

impl<F: Real> ProbabilityMatrix<F> {
    /// Validates and renormalizes every row of a row-major buffer.
    pub fn new(mut data: Vec<F>, n: usize, k: usize) -> Result<Self> {
        check_matrix_dims(data.len(), n, k)?;
        for (i, row) in data.chunks_mut(k).enumerate() {
            normalize_simplex_row(row, i)?;
        }
        Ok(Self { data, n, k })
    }

    /// Builds a matrix from individually validated rows of equal width.
    pub fn from_rows(rows: Vec<ProbabilityVector<F>>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty {
                what: "probability matrix rows".into(),
            });
        }
        let k = rows[0].k();
        let mut data = Vec::with_capacity(rows.len() * k);
        for (i, row) in rows.iter().enumerate() {
            if row.k() != k {
                return Err(Error::ShapeMismatch {
                    detail: format!("row {i} has {} classes, expected {k}", row.k()),
                });
            }
            data.extend_from_slice(row.as_slice());
        }
        let n = rows.len();
        Ok(Self { data, n, k })
    }

    /// Number of samples.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of classes.
    pub fn k(&self) -> usize {
        self.k
    }

    /// One probability row.
    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.k..(i + 1) * self.k]
    }

    /// Iterator over rows.
    pub fn rows(&self) -> impl Iterator<Item = &[F]> {
        self.data.chunks(self.k)
    }

    /// Argmax class of row `i` (ties toward the lowest index).
    pub fn argmax_row(&self, i: usize) -> usize {
        argmax(self.row(i))
    }

    /// Largest entry of row `i`.
    pub fn confidence_row(&self, i: usize) -> F {
        self.row(i)[self.argmax_row(i)]
    }

    /// Underlying row-major buffer.
    pub fn as_slice(&self) -> &[F] {
        &self.data
    }

    /// Row `i` as an owned, already-normalized probability vector.
    pub fn row_vector(&self, i: usize) -> ProbabilityVector<F> {
        ProbabilityVector::from_normalized(self.row(i).to_vec())
    }

    /// Internal constructor for buffers whose rows this crate just normalized.
    pub(crate) fn from_normalized(data: Vec<F>, n: usize, k: usize) -> Self {
        debug_assert_eq!(data.len(), n * k);
        Self { data, n, k }
    }
}

fn check_matrix_dims(len: usize, n: usize, k: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Empty {
            what: "matrix with zero rows".into(),
        });
    }
    if k < 2 {
        return Err(Error::ShapeMismatch {
            detail: format!("matrix needs at least 2 classes, got {k}"),
        });
    }
    if len != n * k {
        return Err(Error::ShapeMismatch {
            detail: format!("buffer length {len} does not equal n*k = {}", n * k),
        });
    }
    Ok(())
}

/// `N x K` matrix of raw classifier logits (finite, otherwise unconstrained).
#[derive(Debug, Clone, PartialEq)]
pub struct LogitsMatrix<F: Real> {
    data: Vec<F>,
    n: usize,
    k: usize,
}

impl<F: Real> LogitsMatrix<F> {
    /// Validates finiteness of a row-major logit buffer.
    pub fn new(data: Vec<F>, n: usize, k: usize) -> Result<Self> {
        check_matrix_dims(data.len(), n, k)?;
        for (idx, v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("logits row {}, entry {}", idx / k, idx % k),
                });
            }
        }
        Ok(Self { data, n, k })
    }

    /// Number of samples.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of classes.
    pub fn k(&self) -> usize {
        self.k
    }

    /// One logit row.
    pub fn row(&self, i: usize) -> &[F] {
        &self.data[i * self.k..(i + 1) * self.k]
    }

    /// Iterator over rows.
    pub fn rows(&self) -> impl Iterator<Item = &[F]> {
        self.data.chunks(self.k)
    }

    /// Underlying row-major buffer.
    pub fn as_slice(&self) -> &[F] {
        &self.data
    }
}

/// Integer class labels checked against a class count `K`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    y: Vec<usize>,
    k: usize,
}

impl LabelVector {
    /// Validates that every label lies in `[0, k)`.
    pub fn new(y: Vec<usize>, k: usize) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::Empty {
                what: "label vector".into(),
            });
        }
        if k < 2 {
            return Err(Error::ShapeMismatch {
                detail: format!("label vector needs at least 2 classes, got {k}"),
            });
        }
        for (row, &label) in y.iter().enumerate() {
            if label >= k {
                return Err(Error::LabelOutOfRange { row, label, k });
            }
        }
        Ok(Self { y, k })
    }

    /// Number of samples.
    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of classes the labels were validated against.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Labels as a slice.
    pub fn as_slice(&self) -> &[usize] {
        &self.y
    }

    /// Number of distinct labels present.
    pub fn distinct(&self) -> usize {
        let mut seen = vec![false; self.k];
        for &label in &self.y {
            seen[label] = true;
        }
        seen.iter().filter(|&&s| s).count()
    }
}

/// Whether a pass stack stores raw logits or probability rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StackKind {
    Logits,
    Probabilities,
}

/// `T x N x K` stack of per-pass model outputs (for example from Monte-Carlo
/// dropout or an ensemble), stored row-major as `t * (n*k) + n * k + j`.
///
/// Probability stacks are validated and renormalized slice by slice on
/// construction; logit stacks only require finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct PassStack<F: Real> {
    data: Vec<F>,
    t: usize,
    n: usize,
    k: usize,
    kind: StackKind,
}

impl<F: Real> PassStack<F> {
    /// Validates a row-major `T x N x K` buffer.
    pub fn new(mut data: Vec<F>, t: usize, n: usize, k: usize, kind: StackKind) -> Result<Self> {
        if t == 0 {
            return Err(Error::Empty {
                what: "pass stack with zero passes".into(),
            });
        }
        if n == 0 {
            return Err(Error::Empty {
                what: "pass stack with zero samples".into(),
            });
        }
        if k < 2 {
            return Err(Error::ShapeMismatch {
                detail: format!("pass stack needs at least 2 classes, got {k}"),
            });
        }
        if data.len() != t * n * k {
            return Err(Error::ShapeMismatch {
                detail: format!(
                    "buffer length {} does not equal t*n*k = {}",
                    data.len(),
                    t * n * k
                ),
            });
        }
        match kind {
            StackKind::Probabilities => {
                for (slice_idx, row) in data.chunks_mut(k).enumerate() {
                    normalize_simplex_row(row, slice_idx % n)?;
                }
            }
            StackKind::Logits => {
                for (idx, v) in data.iter().enumerate() {
                    if !v.is_finite() {
                        return Err(Error::NonFinite {
                            what: format!("pass stack flat entry {idx}"),
                        });
                    }
                }
            }
        }
        Ok(Self { data, t, n, k, kind })
    }

    /// Number of passes.
    pub fn t(&self) -> usize {
        self.t
    }

    /// Number of samples.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of classes.
    pub fn k(&self) -> usize {
        self.k
    }

    /// Storage kind (logits or probabilities).
    pub fn kind(&self) -> StackKind {
        self.kind
    }

    /// The `K` outputs of pass `t` for sample `n`.
    pub fn row(&self, t: usize, n: usize) -> &[F] {
        let base = t * self.n * self.k + n * self.k;
        &self.data[base..base + self.k]
    }

    /// Probability row for pass `t`, sample `n`: identity for probability
    /// stacks, softmax for logit stacks.
    pub fn probability_row(&self, t: usize, n: usize) -> Vec<F> {
        match self.kind {
            StackKind::Probabilities => self.row(t, n).to_vec(),
            StackKind::Logits => softmax_slice(self.row(t, n)),
        }
    }

    /// Per-sample mean probability across passes.
    ///
    /// Logit stacks are converted pass-wise with the softmax before
    /// averaging. The mean of simplex rows is again a simplex row.
    pub fn mean_probability(&self) -> ProbabilityMatrix<F> {
        let weight = F::one() / real_usize::<F>(self.t);
        let mut out = vec![F::zero(); self.n * self.k];
        for t in 0..self.t {
            for n in 0..self.n {
                let row = self.probability_row(t, n);
                let dst = &mut out[n * self.k..(n + 1) * self.k];
                for (o, v) in dst.iter_mut().zip(row.iter()) {
                    *o += *v * weight;
                }
            }
        }
        ProbabilityMatrix::from_normalized(out, self.n, self.k)
    }
}

/// Numerically stable softmax of one logit row (max-subtraction, then
/// division by the sum), returning a renormalized probability vector.
pub fn softmax<F: Real>(logits: &[F]) -> Result<ProbabilityVector<F>> {
    if logits.len() < 2 {
        return Err(Error::ShapeMismatch {
            detail: format!("softmax needs at least 2 classes, got {}", logits.len()),
        });
    }
    for (j, v) in logits.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                what: format!("softmax input entry {j}"),
            });
        }
    }
    Ok(ProbabilityVector::from_normalized(softmax_slice(logits)))
}

/// Softmax over a slice already known to be finite.
pub(crate) fn softmax_slice<F: Real>(logits: &[F]) -> Vec<F> {
    let max = logits.iter().copied().fold(logits[0], F::max);
    let mut out: Vec<F> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: F = out.iter().copied().sum();
    for v in out.iter_mut() {
        *v /= sum;
    }
    out
}

/// Row-wise softmax of a logits matrix.
pub fn softmax_matrix<F: Real>(logits: &LogitsMatrix<F>) -> ProbabilityMatrix<F> {
    let mut data = Vec::with_capacity(logits.n() * logits.k());
    for row in logits.rows() {
        data.extend_from_slice(&softmax_slice(row));
    }
    ProbabilityMatrix::from_normalized(data, logits.n(), logits.k())
}
