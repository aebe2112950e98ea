//! Black-box prediction oracles.
//!
//! An oracle wraps whatever produces class probabilities for images — an
//! in-process function, or an external command invoked per batch by the
//! pipeline tooling. Explanation routines only see the [`Oracle`] trait, so
//! they work identically against builtins and subprocess adapters.
//!
//! Three builtin oracles ship with the crate for fixtures and tests:
//! `constant` (same distribution for every image), `planted` (high
//! probability while one designated superpixel retains its original pixels),
//! and `linear` (probability linear in which superpixels retain their
//! original pixels). The planted and linear oracles detect "retained" by
//! comparing against a stored reference image, which matches how masked
//! perturbations replace pixels with fill values.

use crate::error::{Error, Result};
use crate::explain::SegmentationMap;
use crate::prob::{ProbabilityMatrix, ProbabilityVector};
use crate::scalar::{real, Real};
use serde::{Deserialize, Serialize};

/// Default maximum number of images per oracle call.
pub const DEFAULT_BATCH_LIMIT: usize = 64;

/// Tolerance for deciding that a pixel still holds its reference value.
const PIXEL_MATCH_TOLERANCE: f64 = 1e-9;

/// A grayscale image with intensities in `[0, 1]`, row-major `H x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<F: Real> {
    data: Vec<F>,
    h: usize,
    w: usize,
}

impl<F: Real> Image<F> {
    /// Validates shape, finiteness, and the `[0, 1]` intensity range.
    pub fn new(data: Vec<F>, h: usize, w: usize) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(Error::Empty {
                what: format!("image with shape {h}x{w}"),
            });
        }
        if data.len() != h * w {
            return Err(Error::ShapeMismatch {
                detail: format!("buffer length {} does not equal h*w = {}", data.len(), h * w),
            });
        }
        for (idx, v) in data.iter().enumerate() {
            if !v.is_finite() || *v < F::zero() || *v > F::one() {
                return Err(Error::InvalidParameter {
                    name: "image",
                    detail: format!(
                        "pixel ({}, {}) = {v} outside [0, 1]",
                        idx / w,
                        idx % w
                    ),
                });
            }
        }
        Ok(Self { data, h, w })
    }

    /// Height in pixels.
    pub fn h(&self) -> usize {
        self.h
    }

    /// Width in pixels.
    pub fn w(&self) -> usize {
        self.w
    }

    /// Underlying row-major buffer.
    pub fn as_slice(&self) -> &[F] {
        &self.data
    }

    /// Mutable access for perturbation routines inside the crate; fill
    /// values stay inside `[0, 1]` by construction.
    pub(crate) fn as_mut_slice(&mut self) -> &mut [F] {
        &mut self.data
    }
}

/// Anything that maps image batches to class probabilities.
pub trait Oracle<F: Real> {
    /// Predicts one probability row per image, in batch order.
    fn predict(&self, batch: &[Image<F>]) -> Result<ProbabilityMatrix<F>>;

    /// Largest batch the oracle accepts per call.
    fn batch_limit(&self) -> usize {
        DEFAULT_BATCH_LIMIT
    }

    /// Whether concurrent calls are allowed. Callers in this crate always
    /// call sequentially, which is valid for both answers.
    fn reentrant(&self) -> bool {
        false
    }
}

/// Runs one oracle call with contract enforcement: batch-limit respected,
/// one row per image, and a consistent class count across calls.
pub fn predict_checked<F: Real>(
    oracle: &dyn Oracle<F>,
    batch: &[Image<F>],
    call: usize,
    expected_k: Option<usize>,
) -> Result<ProbabilityMatrix<F>> {
    if batch.is_empty() {
        return Err(Error::Empty {
            what: "oracle batch".into(),
        });
    }
    if batch.len() > oracle.batch_limit() {
        return Err(Error::InvalidParameter {
            name: "batch",
            detail: format!(
                "batch of {} exceeds the oracle batch limit {}",
                batch.len(),
                oracle.batch_limit()
            ),
        });
    }
    let out = oracle.predict(batch)?;
    if out.n() != batch.len() {
        return Err(Error::Oracle {
            call,
            message: format!("returned {} rows for {} images", out.n(), batch.len()),
        });
    }
    if let Some(k) = expected_k {
        if out.k() != k {
            return Err(Error::Oracle {
                call,
                message: format!("returned {} classes but an earlier call returned {k}", out.k()),
            });
        }
    }
    Ok(out)
}

/// Builtin oracle: the same probability row for every image.
#[derive(Debug, Clone)]
pub struct ConstantOracle<F: Real> {
    p: ProbabilityVector<F>,
}

impl<F: Real> ConstantOracle<F> {
    pub fn new(p: ProbabilityVector<F>) -> Self {
        Self { p }
    }
}

impl<F: Real> Oracle<F> for ConstantOracle<F> {
    fn predict(&self, batch: &[Image<F>]) -> Result<ProbabilityMatrix<F>> {
        let mut data = Vec::with_capacity(batch.len() * self.p.k());
        for _ in batch {
            data.extend_from_slice(self.p.as_slice());
        }
        Ok(ProbabilityMatrix::from_normalized(data, batch.len(), self.p.k()))
    }

    fn reentrant(&self) -> bool {
        true
    }
}

fn check_shape_match<F: Real>(
    reference: &Image<F>,
    seg: &SegmentationMap,
) -> Result<()> {
    if reference.h() != seg.h() || reference.w() != seg.w() {
        return Err(Error::ShapeMismatch {
            detail: format!(
                "reference image is {}x{} but segmentation is {}x{}",
                reference.h(),
                reference.w(),
                seg.h(),
                seg.w()
            ),
        });
    }
    Ok(())
}

fn check_images_match_reference<F: Real>(
    reference: &Image<F>,
    batch: &[Image<F>],
) -> Result<()> {
    for (i, image) in batch.iter().enumerate() {
        if image.h() != reference.h() || image.w() != reference.w() {
            return Err(Error::ShapeMismatch {
                detail: format!(
                    "batch image {i} is {}x{} but the oracle reference is {}x{}",
                    image.h(),
                    image.w(),
                    reference.h(),
                    reference.w()
                ),
            });
        }
    }
    Ok(())
}

/// Whether every pixel of superpixel `s` still holds its reference value.
fn superpixel_retained<F: Real>(
    image: &Image<F>,
    reference: &Image<F>,
    seg: &SegmentationMap,
    s: usize,
) -> bool {
    let tol = real::<F>(PIXEL_MATCH_TOLERANCE);
    seg.as_slice()
        .iter()
        .enumerate()
        .filter(|(_, &id)| id == s)
        .all(|(idx, _)| (image.as_slice()[idx] - reference.as_slice()[idx]).abs() <= tol)
}

fn spread_remainder<F: Real>(value: F, class_index: usize, k: usize, out: &mut Vec<F>) {
    let rest = (F::one() - value) / real::<F>((k - 1) as f64);
    for j in 0..k {
        out.push(if j == class_index { value } else { rest });
    }
}

/// Builtin oracle: probability `hi` for a designated class while a planted
/// superpixel retains its original pixels, `lo` once it is overwritten.
/// Remaining mass is spread uniformly over the other classes.
#[derive(Debug, Clone)]
pub struct PlantedOracle<F: Real> {
    reference: Image<F>,
    seg: SegmentationMap,
    superpixel: usize,
    class_index: usize,
    k: usize,
    hi: F,
    lo: F,
}

impl<F: Real> PlantedOracle<F> {
    pub fn new(
        reference: Image<F>,
        seg: SegmentationMap,
        superpixel: usize,
        class_index: usize,
        k: usize,
        hi: F,
        lo: F,
    ) -> Result<Self> {
        check_shape_match(&reference, &seg)?;
        if superpixel >= seg.s_count() {
            return Err(Error::InvalidParameter {
                name: "superpixel",
                detail: format!(
                    "planted superpixel {superpixel} out of range for {} superpixels",
                    seg.s_count()
                ),
            });
        }
        if k < 2 || class_index >= k {
            return Err(Error::InvalidParameter {
                name: "class_index",
                detail: format!("class {class_index} out of range for {k} classes"),
            });
        }
        for (name, v) in [("hi", hi), ("lo", lo)] {
            if !v.is_finite() || v <= F::zero() || v >= F::one() {
                return Err(Error::InvalidParameter {
                    name: "hi_lo",
                    detail: format!("{name} must lie strictly inside (0, 1), got {v}"),
                });
            }
        }
        Ok(Self {
            reference,
            seg,
            superpixel,
            class_index,
            k,
            hi,
            lo,
        })
    }
}

impl<F: Real> Oracle<F> for PlantedOracle<F> {
    fn predict(&self, batch: &[Image<F>]) -> Result<ProbabilityMatrix<F>> {
        check_images_match_reference(&self.reference, batch)?;
        let mut data = Vec::with_capacity(batch.len() * self.k);
        for image in batch {
            let retained = superpixel_retained(image, &self.reference, &self.seg, self.superpixel);
            let value = if retained { self.hi } else { self.lo };
            spread_remainder(value, self.class_index, self.k, &mut data);
        }
        ProbabilityMatrix::new(data, batch.len(), self.k)
    }

    fn reentrant(&self) -> bool {
        true
    }
}

/// Builtin oracle: class probability linear in which superpixels retain
/// their original pixels, `p = clamp(sum_s a_s m_s, 0, 1)`, remaining mass
/// spread uniformly over the other classes.
#[derive(Debug, Clone)]
pub struct LinearMaskOracle<F: Real> {
    reference: Image<F>,
    seg: SegmentationMap,
    coefficients: Vec<F>,
    class_index: usize,
    k: usize,
}

impl<F: Real> LinearMaskOracle<F> {
    pub fn new(
        reference: Image<F>,
        seg: SegmentationMap,
        coefficients: Vec<F>,
        class_index: usize,
        k: usize,
    ) -> Result<Self> {
        check_shape_match(&reference, &seg)?;
        if coefficients.len() != seg.s_count() {
            return Err(Error::ShapeMismatch {
                detail: format!(
                    "{} coefficients for {} superpixels",
                    coefficients.len(),
                    seg.s_count()
                ),
            });
        }
        for (s, &a) in coefficients.iter().enumerate() {
            if !a.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("linear oracle coefficient {s}"),
                });
            }
        }
        if k < 2 || class_index >= k {
            return Err(Error::InvalidParameter {
                name: "class_index",
                detail: format!("class {class_index} out of range for {k} classes"),
            });
        }
        Ok(Self {
            reference,
            seg,
            coefficients,
            class_index,
            k,
        })
    }
}

impl<F: Real> Oracle<F> for LinearMaskOracle<F> {
    fn predict(&self, batch: &[Image<F>]) -> Result<ProbabilityMatrix<F>> {
        check_images_match_reference(&self.reference, batch)?;
        let mut data = Vec::with_capacity(batch.len() * self.k);
        for image in batch {
            let mut value = F::zero();
            for (s, &a) in self.coefficients.iter().enumerate() {
                if superpixel_retained(image, &self.reference, &self.seg, s) {
                    value += a;
                }
            }
            let value = value.max(F::zero()).min(F::one());
            spread_remainder(value, self.class_index, self.k, &mut data);
        }
        ProbabilityMatrix::new(data, batch.len(), self.k)
    }

    fn reentrant(&self) -> bool {
        true
    }
}

/// Parameters for builtin oracles inside an [`OracleSpec`]. Which fields are
/// required depends on the builtin; paths are resolved by the tooling that
/// loads the spec.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BuiltinParams {
    /// `constant`: the probability row to return.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probabilities: Option<Vec<f64>>,
    /// `planted`: the designated superpixel id.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub superpixel: Option<usize>,
    /// `planted`/`linear`: the class the signal feeds.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class_index: Option<usize>,
    /// `planted`/`linear`: total number of classes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// `planted`: probability while the superpixel is retained.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hi: Option<f64>,
    /// `planted`: probability once the superpixel is overwritten.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lo: Option<f64>,
    /// `linear`: one coefficient per superpixel.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<Vec<f64>>,
    /// `planted`/`linear`: path to the reference image tensor.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    /// Index into the reference tensor when it holds an image batch.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_index: Option<usize>,
    /// `planted`/`linear`: path to the segmentation tensor.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<String>,
}

fn default_batch_limit() -> usize {
    DEFAULT_BATCH_LIMIT
}

fn default_true() -> bool {
    true
}

/// Declarative oracle description, serializable as JSON. The `mode` tag
/// guarantees that exactly one of the builtin name or the subprocess command
/// is present.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum OracleSpec {
    /// In-process builtin oracle.
    Builtin {
        /// One of `constant`, `planted`, `linear`.
        name: String,
        #[serde(default)]
        params: BuiltinParams,
        #[serde(default = "default_batch_limit")]
        batch_limit: usize,
        /// Builtins are pure functions, so they default to reentrant.
        #[serde(default = "default_true")]
        reentrant: bool,
    },
    /// External command invoked as `command... <input> <output>`.
    Subprocess {
        /// Executable and leading arguments; the input and output tensor
        /// paths are appended per call.
        command: Vec<String>,
        #[serde(default = "default_batch_limit")]
        batch_limit: usize,
        /// External processes default to single-flight.
        #[serde(default)]
        reentrant: bool,
    },
}

impl OracleSpec {
    /// Structural validation: known builtin name, its required parameters
    /// present, a non-empty command for subprocess mode, and a positive
    /// batch limit.
    pub fn validate(&self) -> Result<()> {
        match self {
            OracleSpec::Builtin {
                name,
                params,
                batch_limit,
                ..
            } => {
                if *batch_limit == 0 {
                    return Err(Error::InvalidParameter {
                        name: "batch_limit",
                        detail: "must be at least 1".into(),
                    });
                }
                let missing = |field: &str| Error::InvalidParameter {
                    name: "params",
                    detail: format!("builtin `{name}` requires `{field}`"),
                };
                match name.as_str() {
                    "constant" => {
                        if params.probabilities.is_none() {
                            return Err(missing("probabilities"));
                        }
                    }
                    "planted" => {
                        for (present, field) in [
                            (params.superpixel.is_some(), "superpixel"),
                            (params.class_index.is_some(), "class_index"),
                            (params.k.is_some(), "k"),
                            (params.reference.is_some(), "reference"),
                            (params.segmentation.is_some(), "segmentation"),
                        ] {
                            if !present {
                                return Err(missing(field));
                            }
                        }
                    }
                    "linear" => {
                        for (present, field) in [
                            (params.coefficients.is_some(), "coefficients"),
                            (params.class_index.is_some(), "class_index"),
                            (params.k.is_some(), "k"),
                            (params.reference.is_some(), "reference"),
                            (params.segmentation.is_some(), "segmentation"),
                        ] {
                            if !present {
                                return Err(missing(field));
                            }
                        }
                    }
                    other => {
                        return Err(Error::InvalidParameter {
                            name: "name",
                            detail: format!(
                                "unknown builtin oracle `{other}` (expected constant, planted, or linear)"
                            ),
                        });
                    }
                }
                Ok(())
            }
            OracleSpec::Subprocess {
                command,
                batch_limit,
                ..
            } => {
                if command.is_empty() {
                    return Err(Error::InvalidParameter {
                        name: "command",
                        detail: "subprocess oracle needs a non-empty command".into(),
                    });
                }
                if *batch_limit == 0 {
                    return Err(Error::InvalidParameter {
                        name: "batch_limit",
                        detail: "must be at least 1".into(),
                    });
                }
                Ok(())
            }
        }
    }

    /// Declared batch limit.
    pub fn batch_limit(&self) -> usize {
        match self {
            OracleSpec::Builtin { batch_limit, .. } => *batch_limit,
            OracleSpec::Subprocess { batch_limit, .. } => *batch_limit,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::grid_superpixels;

    fn image(values: &[f64], h: usize, w: usize) -> Image<f64> {
        Image::new(values.to_vec(), h, w).unwrap()
    }

    /// 4x4 reference with a textured bright cell (superpixel 0 of a 2-cell
    /// grid) so that replacing it with any constant changes its pixels.
    fn planted_fixture() -> (Image<f64>, SegmentationMap) {
        let mut data = vec![0.1f64; 16];
        let seg = grid_superpixels(4, 4, 2).unwrap();
        for (idx, &id) in seg.as_slice().iter().enumerate() {
            if id == 0 {
                data[idx] = 0.7 + 0.05 * (idx % 4) as f64;
            }
        }
        (image(&data, 4, 4), seg)
    }

    #[test]
    fn constant_oracle_repeats_its_row() {
        let p = ProbabilityVector::new(vec![0.2f64, 0.3, 0.5]).unwrap();
        let oracle = ConstantOracle::new(p.clone());
        let batch = vec![image(&[0.0; 4], 2, 2), image(&[1.0; 4], 2, 2)];
        let out = oracle.predict(&batch).unwrap();
        assert_eq!(out.n(), 2);
        for i in 0..2 {
            assert_eq!(out.row(i), p.as_slice());
        }
    }

    #[test]
    fn planted_oracle_is_hi_while_the_superpixel_is_retained() {
        let (reference, seg) = planted_fixture();
        let oracle =
            PlantedOracle::new(reference.clone(), seg, 0, 2, 6, 0.9, 0.1).unwrap();
        let out = oracle.predict(&[reference]).unwrap();
        assert!((out.row(0)[2] - 0.9).abs() < 1e-12);
        assert!((out.row(0)[0] - 0.02).abs() < 1e-12);
    }

    #[test]
    fn planted_oracle_drops_to_lo_once_the_superpixel_is_filled() {
        let (reference, seg) = planted_fixture();
        let oracle =
            PlantedOracle::new(reference.clone(), seg.clone(), 0, 2, 6, 0.9, 0.1).unwrap();
        // Replace the planted superpixel with its own mean fill value.
        let members: Vec<usize> = seg
            .as_slice()
            .iter()
            .enumerate()
            .filter(|(_, &id)| id == 0)
            .map(|(idx, _)| idx)
            .collect();
        let mean: f64 =
            members.iter().map(|&m| reference.as_slice()[m]).sum::<f64>() / members.len() as f64;
        let mut filled = reference.as_slice().to_vec();
        for &m in &members {
            filled[m] = mean;
        }
        let out = oracle.predict(&[image(&filled, 4, 4)]).unwrap();
        assert!((out.row(0)[2] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn planted_oracle_ignores_changes_to_other_superpixels() {
        let (reference, seg) = planted_fixture();
        let oracle =
            PlantedOracle::new(reference.clone(), seg, 0, 0, 4, 0.9, 0.1).unwrap();
        let mut modified = reference.as_slice().to_vec();
        modified[15] = 0.0; // bottom-right cell, not the planted one
        let out = oracle.predict(&[image(&modified, 4, 4)]).unwrap();
        assert!((out.row(0)[0] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn linear_oracle_sums_coefficients_of_retained_superpixels() {
        let (reference, seg) = planted_fixture();
        let coefficients = vec![0.1f64, 0.2, 0.3, 0.25];
        let oracle = LinearMaskOracle::new(
            reference.clone(),
            seg.clone(),
            coefficients.clone(),
            1,
            3,
        )
        .unwrap();
        let out = oracle.predict(&[reference.clone()]).unwrap();
        assert!((out.row(0)[1] - 0.85).abs() < 1e-12);
        // Overwrite superpixel 3 (bottom-right 2x2 cell) with zeros.
        let mut modified = reference.as_slice().to_vec();
        for (idx, &id) in seg.as_slice().iter().enumerate() {
            if id == 3 {
                modified[idx] = 0.0;
            }
        }
        let out = oracle.predict(&[image(&modified, 4, 4)]).unwrap();
        assert!((out.row(0)[1] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn predict_checked_enforces_the_batch_limit() {
        struct Tiny;
        impl Oracle<f64> for Tiny {
            fn predict(&self, batch: &[Image<f64>]) -> Result<ProbabilityMatrix<f64>> {
                ConstantOracle::new(ProbabilityVector::new(vec![0.5, 0.5]).unwrap())
                    .predict(batch)
            }
            fn batch_limit(&self) -> usize {
                2
            }
        }
        let batch = vec![image(&[0.5; 4], 2, 2); 3];
        let err = predict_checked(&Tiny, &batch, 0, None).unwrap_err();
        assert!(matches!(err, Error::InvalidParameter { .. }));
        assert!(predict_checked(&Tiny, &batch[..2], 0, Some(2)).is_ok());
    }

    #[test]
    fn predict_checked_rejects_class_count_drift() {
        struct Drifty;
        impl Oracle<f64> for Drifty {
            fn predict(&self, batch: &[Image<f64>]) -> Result<ProbabilityMatrix<f64>> {
                ConstantOracle::new(ProbabilityVector::new(vec![0.5, 0.5]).unwrap())
                    .predict(batch)
            }
        }
        let batch = vec![image(&[0.5; 4], 2, 2)];
        let err = predict_checked(&Drifty, &batch, 7, Some(3)).unwrap_err();
        match err {
            Error::Oracle { call, .. } => assert_eq!(call, 7),
            other => panic!("expected oracle error, got {other:?}"),
        }
    }

    #[test]
    fn image_pixels_must_lie_in_unit_range() {
        assert!(Image::new(vec![0.0f64, 1.1, 0.5, 0.5], 2, 2).is_err());
        assert!(Image::new(vec![0.0f64, f64::NAN, 0.5, 0.5], 2, 2).is_err());
        assert!(Image::new(vec![0.5f64; 4], 2, 2).is_ok());
    }

    #[test]
    fn spec_json_round_trips_and_validates() {
        let spec = OracleSpec::Builtin {
            name: "planted".into(),
            params: BuiltinParams {
                superpixel: Some(3),
                class_index: Some(0),
                k: Some(6),
                hi: Some(0.9),
                lo: Some(0.1),
                reference: Some("images.npy".into()),
                reference_index: Some(0),
                segmentation: Some("segmentation.npy".into()),
                ..BuiltinParams::default()
            },
            batch_limit: 64,
            reentrant: true,
        };
        spec.validate().unwrap();
        let json = serde_json::to_string(&spec).unwrap();
        let back: OracleSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(spec, back);
    }

    #[test]
    fn spec_validation_catches_missing_pieces() {
        let bad_name = OracleSpec::Builtin {
            name: "mystery".into(),
            params: BuiltinParams::default(),
            batch_limit: 64,
            reentrant: true,
        };
        assert!(bad_name.validate().is_err());
        let missing = OracleSpec::Builtin {
            name: "constant".into(),
            params: BuiltinParams::default(),
            batch_limit: 64,
            reentrant: true,
        };
        assert!(missing.validate().is_err());
        let empty_command = OracleSpec::Subprocess {
            command: vec![],
            batch_limit: 64,
            reentrant: false,
        };
        assert!(empty_command.validate().is_err());
    }
}
