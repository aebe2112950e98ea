//! Loads model outputs into calibrated probability matrices per split.
//!
//! Commands that evaluate predictions accept exactly one tensor source:
//! `probabilities` (N x K rows used as-is), `logits` (N x K, softmaxed,
//! optionally temperature-scaled), or `passes` (T x N x K logit stacks,
//! temperature-scaled per pass, averaged in probability space, and used to
//! derive per-sample uncertainty scores). Rows align with manifest rows;
//! the calibration/evaluation split selects which rows feed which stage.

use crate::config::{exactly_one_source, resolve, SourceKind};
use crate::error::{CliError, Result};
use crate::manifest::{gather_rows, Manifest, Split, SplitIndices};
use crate::npy;
use crate::provenance::Provenance;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use uqcal_core::calibration::apply_temperature;
use uqcal_core::prob::{LabelVector, LogitsMatrix, PassStack, ProbabilityMatrix, StackKind};
use uqcal_core::uncertainty::UncertaintyScores;

/// Calibration artifact persisted by the calibrate command and consumed
/// by the evaluation commands.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationArtifact {
    pub temperature: f64,
    pub nll_before: f64,
    pub nll_after: f64,
    pub ece_before: f64,
    pub ece_after: f64,
    pub brier_before: f64,
    pub brier_after: f64,
    pub n_calibration: usize,
    pub n_evaluation: usize,
    pub k: usize,
    pub ece_bins: usize,
    pub provenance: Provenance,
}

/// Probabilities, labels, and optional uncertainty for one split half.
#[derive(Debug)]
pub struct SplitView {
    pub probs: ProbabilityMatrix<f64>,
    pub labels: LabelVector,
    /// Manifest row index per sample.
    pub rows: Vec<usize>,
    /// Present when the source was a pass stack.
    pub uncertainty: Option<UncertaintyScores<f64>>,
}

/// Fully loaded inputs for an evaluation command.
#[derive(Debug)]
pub struct DataBundle {
    pub manifest: Manifest,
    pub cal: SplitView,
    pub eval: SplitView,
    /// Temperature applied to logit sources (absent for probability
    /// sources or when no calibration artifact was given).
    pub temperature: Option<f64>,
    /// `"temperature_scaling"` or `"none"`.
    pub method: &'static str,
    /// Number of stochastic passes when the source was a pass stack.
    pub t_passes: Option<usize>,
}

fn labels_for(manifest: &Manifest, rows: &[usize]) -> Result<LabelVector> {
    let y: Vec<usize> = rows.iter().map(|&i| manifest.rows[i].label).collect();
    LabelVector::new(y, manifest.k).map_err(CliError::from)
}

fn check_rows(path: &Path, found_n: usize, found_k: usize, manifest: &Manifest) -> Result<()> {
    if found_n != manifest.len() {
        return Err(CliError::validation(format!(
            "{}: {} rows but the manifest lists {} samples",
            path.display(),
            found_n,
            manifest.len()
        )));
    }
    if found_k != manifest.k {
        return Err(CliError::validation(format!(
            "{}: {} classes but the manifest declares {}",
            path.display(),
            found_k,
            manifest.k
        )));
    }
    Ok(())
}

fn split_view_from_probs(
    manifest: &Manifest,
    rows: &[usize],
    data: &[f64],
    k: usize,
) -> Result<SplitView> {
    let gathered = gather_rows(data, k, rows);
    let probs = ProbabilityMatrix::new(gathered, rows.len(), k)?;
    Ok(SplitView {
        probs,
        labels: labels_for(manifest, rows)?,
        rows: rows.to_vec(),
        uncertainty: None,
    })
}

fn split_view_from_logits(
    manifest: &Manifest,
    rows: &[usize],
    data: &[f64],
    k: usize,
    temperature: f64,
) -> Result<SplitView> {
    let gathered = gather_rows(data, k, rows);
    let z = LogitsMatrix::new(gathered, rows.len(), k)?;
    let probs = apply_temperature(&z, temperature)?;
    Ok(SplitView {
        probs,
        labels: labels_for(manifest, rows)?,
        rows: rows.to_vec(),
        uncertainty: None,
    })
}

fn split_view_from_passes(
    manifest: &Manifest,
    rows: &[usize],
    data: &[f64],
    t: usize,
    n_total: usize,
    k: usize,
    temperature: f64,
) -> Result<SplitView> {
    // Temperature scaling divides logits before the softmax; gather the
    // selected rows from each pass and scale in one go.
    let per_pass = n_total * k;
    let mut scaled = Vec::with_capacity(t * rows.len() * k);
    for pass in 0..t {
        let slab = &data[pass * per_pass..(pass + 1) * per_pass];
        for &i in rows {
            scaled.extend(slab[i * k..(i + 1) * k].iter().map(|&v| v / temperature));
        }
    }
    let stack = PassStack::new(scaled, t, rows.len(), k, StackKind::Logits)?;
    let uncertainty = UncertaintyScores::from_stack(&stack)?;
    Ok(SplitView {
        probs: stack.mean_probability(),
        labels: labels_for(manifest, rows)?,
        rows: rows.to_vec(),
        uncertainty: Some(uncertainty),
    })
}

/// Loads manifest, split, tensor source, and optional calibration artifact,
/// recording every file into `prov`.
#[allow(clippy::too_many_arguments)]
pub fn load_bundle(
    config_dir: &Path,
    manifest_path: &Path,
    split_path: &Path,
    probabilities: &Option<PathBuf>,
    logits: &Option<PathBuf>,
    passes: &Option<PathBuf>,
    calibration: &Option<PathBuf>,
    prov: &mut Provenance,
) -> Result<DataBundle> {
    let manifest_abs = resolve(config_dir, manifest_path);
    let split_abs = resolve(config_dir, split_path);
    let manifest = Manifest::read(&manifest_abs)?;
    let split = Split::read(&split_abs)?;
    let indices: SplitIndices = split.resolve(&manifest)?;
    prov.add_input(manifest_path, &manifest_abs)?;
    prov.add_input(split_path, &split_abs)?;

    let source = exactly_one_source(probabilities, logits, passes)?;

    let temperature = match calibration {
        Some(cal_path) => {
            if matches!(source, SourceKind::Probabilities(_)) {
                return Err(CliError::validation(
                    "a calibration artifact cannot be applied to a `probabilities` source; \
                     supply `logits` or `passes` instead",
                ));
            }
            let cal_abs = resolve(config_dir, cal_path);
            let artifact: CalibrationArtifact = crate::fsio::read_json(&cal_abs)?;
            if !(artifact.temperature.is_finite() && artifact.temperature > 0.0) {
                return Err(CliError::validation(format!(
                    "{}: temperature {} is not a positive real",
                    cal_abs.display(),
                    artifact.temperature
                )));
            }
            prov.add_input(cal_path, &cal_abs)?;
            Some(artifact.temperature)
        }
        None => None,
    };
    let t_apply = temperature.unwrap_or(1.0);

    let mut t_passes: Option<usize> = None;
    let (cal, eval) = match &source {
        SourceKind::Probabilities(path) => {
            let abs = resolve(config_dir, path);
            let tensor = npy::read(&abs)?;
            let [n, k] = tensor.shape.as_slice() else {
                return Err(CliError::validation(format!(
                    "{}: probabilities must be an N x K tensor, found shape {:?}",
                    abs.display(),
                    tensor.shape
                )));
            };
            check_rows(&abs, *n, *k, &manifest)?;
            let data = tensor.as_f64(&abs)?;
            prov.add_input(path, &abs)?;
            (
                split_view_from_probs(&manifest, &indices.calibration, data, *k)?,
                split_view_from_probs(&manifest, &indices.evaluation, data, *k)?,
            )
        }
        SourceKind::Logits(path) => {
            let abs = resolve(config_dir, path);
            let tensor = npy::read(&abs)?;
            let [n, k] = tensor.shape.as_slice() else {
                return Err(CliError::validation(format!(
                    "{}: logits must be an N x K tensor, found shape {:?}",
                    abs.display(),
                    tensor.shape
                )));
            };
            check_rows(&abs, *n, *k, &manifest)?;
            let data = tensor.as_f64(&abs)?;
            prov.add_input(path, &abs)?;
            (
                split_view_from_logits(&manifest, &indices.calibration, data, *k, t_apply)?,
                split_view_from_logits(&manifest, &indices.evaluation, data, *k, t_apply)?,
            )
        }
        SourceKind::Passes(path) => {
            let abs = resolve(config_dir, path);
            let tensor = npy::read(&abs)?;
            let [t, n, k] = tensor.shape.as_slice() else {
                return Err(CliError::validation(format!(
                    "{}: passes must be a T x N x K tensor, found shape {:?}",
                    abs.display(),
                    tensor.shape
                )));
            };
            check_rows(&abs, *n, *k, &manifest)?;
            if *t < 2 {
                return Err(CliError::validation(format!(
                    "{}: pass stacks need at least 2 passes, found {t}",
                    abs.display()
                )));
            }
            let data = tensor.as_f64(&abs)?;
            prov.add_input(path, &abs)?;
            t_passes = Some(*t);
            (
                split_view_from_passes(&manifest, &indices.calibration, data, *t, *n, *k, t_apply)?,
                split_view_from_passes(&manifest, &indices.evaluation, data, *t, *n, *k, t_apply)?,
            )
        }
    };

    Ok(DataBundle {
        manifest,
        cal,
        eval,
        temperature,
        method: if temperature.is_some() { "temperature_scaling" } else { "none" },
        t_passes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SynthConfig;
    use crate::fsio::write_json;
    use crate::synth;

    /// Writes a small fixture and returns its directory.
    fn fixture(dir: &Path, c: f64) -> SynthConfig {
        let config: SynthConfig = serde_json::from_str(&format!(
            r#"{{"n_calibration": 30, "n_evaluation": 50, "k": 3, "t_passes": 4,
                 "miscalibration_c": {c}, "image": {{"h": 8, "w": 8, "cell": 4}}}}"#
        ))
        .unwrap();
        let data = synth::generate(&config, 9).unwrap();
        let manifest = synth::build_manifest(&config, &data).unwrap();
        manifest.write(&dir.join("manifest.csv")).unwrap();
        synth::build_split(&config, &manifest).write(&dir.join("split.json")).unwrap();
        npy::write_f64(&dir.join("logits.npy"), &[80, 3], &data.observed_logits).unwrap();
        npy::write_f64(&dir.join("passes.npy"), &[4, 80, 3], &data.passes).unwrap();
        config
    }

    fn bundle_with(dir: &Path, source: &str, calibration: Option<&str>) -> Result<DataBundle> {
        let mut prov = Provenance::new("test", None, b"{}");
        let pick = |name: &str| -> Option<PathBuf> {
            (source == name).then(|| PathBuf::from(format!("{name}.npy")))
        };
        load_bundle(
            dir,
            Path::new("manifest.csv"),
            Path::new("split.json"),
            &pick("probabilities"),
            &pick("logits"),
            &pick("passes"),
            &calibration.map(PathBuf::from),
            &mut prov,
        )
    }

    #[test]
    fn logits_source_loads_and_splits() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path(), 1.0);
        let bundle = bundle_with(dir.path(), "logits", None).unwrap();
        assert_eq!(bundle.cal.probs.n(), 30);
        assert_eq!(bundle.eval.probs.n(), 50);
        assert_eq!(bundle.eval.probs.k(), 3);
        assert_eq!(bundle.method, "none");
        assert!(bundle.cal.uncertainty.is_none());
        assert_eq!(bundle.eval.rows, (30..80).collect::<Vec<_>>());
    }

    #[test]
    fn passes_source_produces_uncertainty_scores() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path(), 1.0);
        let bundle = bundle_with(dir.path(), "passes", None).unwrap();
        let unc = bundle.eval.uncertainty.as_ref().unwrap();
        assert_eq!(unc.entropy.len(), 50);
        assert!(unc.normalized.iter().all(|&u| (0.0..=1.0).contains(&u)));
    }

    #[test]
    fn calibration_artifact_rescales_logits() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path(), 2.0);
        let plain = bundle_with(dir.path(), "logits", None).unwrap();
        let artifact = CalibrationArtifact {
            temperature: 2.0,
            nll_before: 0.0,
            nll_after: 0.0,
            ece_before: 0.0,
            ece_after: 0.0,
            brier_before: 0.0,
            brier_after: 0.0,
            n_calibration: 30,
            n_evaluation: 50,
            k: 3,
            ece_bins: 15,
            provenance: Provenance::new("calibrate", Some(1), b"{}"),
        };
        write_json(&dir.path().join("calibration.json"), &artifact).unwrap();
        let scaled = bundle_with(dir.path(), "logits", Some("calibration.json")).unwrap();
        assert_eq!(scaled.temperature, Some(2.0));
        assert_eq!(scaled.method, "temperature_scaling");
        // Dividing the observed logits (c = 2) by T = 2 recovers the base
        // logits; confidences must drop toward the calibrated ones.
        let mean_conf = |b: &DataBundle| {
            (0..b.eval.probs.n())
                .map(|i| b.eval.probs.confidence_row(i))
                .sum::<f64>()
                / b.eval.probs.n() as f64
        };
        assert!(mean_conf(&scaled) < mean_conf(&plain));
    }

    #[test]
    fn probabilities_source_rejects_calibration_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path(), 1.0);
        npy::write_f64(
            &dir.path().join("probabilities.npy"),
            &[80, 3],
            &vec![1.0 / 3.0; 240],
        )
        .unwrap();
        let artifact_path = dir.path().join("calibration.json");
        std::fs::write(&artifact_path, "{}").unwrap();
        let err = bundle_with(dir.path(), "probabilities", Some("calibration.json")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("probabilities"), "{err}");
    }

    #[test]
    fn shape_mismatches_are_validation_errors() {
        let dir = tempfile::tempdir().unwrap();
        fixture(dir.path(), 1.0);
        npy::write_f64(&dir.path().join("probabilities.npy"), &[79, 3], &vec![0.5; 237]).unwrap();
        let err = bundle_with(dir.path(), "probabilities", None).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("79 rows"), "{err}");
    }
}
