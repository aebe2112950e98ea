//! Error type shared by all modules in this crate.

use thiserror::Error;

/// Errors produced by validation and computation routines.
#[derive(Debug, Error)]
pub enum Error {
    /// An input contained NaN or an infinity where a finite value is required.
    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    /// A probability row failed simplex validation (entry bounds or row sum).
    #[error("simplex violation at row {row}: {detail}")]
    Simplex { row: usize, detail: String },

    /// Dimensions of related inputs do not agree.
    #[error("shape mismatch: {detail}")]
    ShapeMismatch { detail: String },

    /// An input that must be non-empty was empty.
    #[error("empty input: {what}")]
    Empty { what: String },

    /// A scalar parameter was outside its documented domain.
    #[error("invalid parameter `{name}`: {detail}")]
    InvalidParameter { name: &'static str, detail: String },

    /// A class label was not in `[0, K)`.
    #[error("label {label} out of range for {k} classes at row {row}")]
    LabelOutOfRange { row: usize, label: usize, k: usize },

    /// The label set cannot support the requested fit.
    #[error("degenerate labels: {detail}")]
    DegenerateLabels { detail: String },

    /// An evidential concentration parameter was below 1.
    #[error("evidential concentration below 1 at sample {sample}, class {class}: {value}")]
    EvidentialAlpha {
        sample: usize,
        class: usize,
        value: f64,
    },

    /// A black-box oracle call failed or returned malformed output.
    #[error("oracle failure on call {call}: {message}")]
    Oracle { call: usize, message: String },

    /// A surrogate fit was requested with fewer samples than unknowns.
    #[error("under-determined surrogate fit: {n_samples} samples for {s_count} superpixels (need at least {})", s_count + 1)]
    UnderDetermined { n_samples: usize, s_count: usize },

    /// A linear solve failed (non-positive-definite normal equations).
    #[error("linear solve failed: {detail}")]
    Solve { detail: String },

    /// A segmentation map violated its contract.
    #[error("invalid segmentation: {detail}")]
    Segmentation { detail: String },
}

impl Error {
    /// Whether this error describes invalid input rather than a failure that
    /// occurred while computing on valid input. Callers exposing process exit
    /// codes use this to distinguish validation errors from computation
    /// errors.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Oracle { .. } | Error::Solve { .. })
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
