//! Per-command JSON configuration.
//!
//! Every subcommand takes `--config <json>`; the config carries input
//! paths and parameters, while the command line carries only the seed and
//! the output directory. Unknown keys are rejected so typos fail loudly.
//! Relative paths inside a config resolve against the config file's
//! directory, which keeps fixture directories relocatable.

use crate::error::{CliError, Result};
use serde::Deserialize;
use std::path::{Path, PathBuf};

/// Reads and deserializes a config file, remembering its directory for
/// relative-path resolution.
pub struct ConfigFile<T> {
    pub value: T,
    pub dir: PathBuf,
    /// Raw bytes, hashed into provenance.
    pub bytes: Vec<u8>,
}

pub fn load<T: serde::de::DeserializeOwned>(path: &Path) -> Result<ConfigFile<T>> {
    let bytes = std::fs::read(path).map_err(|e| CliError::reading(path, e))?;
    let value: T = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok(ConfigFile { value, dir, bytes })
}

/// Resolves a config-relative path.
pub fn resolve(dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        dir.join(p)
    }
}

fn default_n_calibration() -> usize {
    500
}
fn default_n_evaluation() -> usize {
    1000
}
fn default_k() -> usize {
    6
}
fn default_t_passes() -> usize {
    8
}
fn default_one() -> f64 {
    1.0
}
fn default_logit_scale() -> f64 {
    1.5
}
fn default_pass_noise() -> f64 {
    0.3
}
fn default_image_side() -> usize {
    16
}
fn default_image_cell() -> usize {
    4
}
fn default_image_hi() -> f64 {
    0.9
}
fn default_image_lo() -> f64 {
    0.1
}
fn default_vendors() -> Vec<String> {
    vec!["vendor_a".into(), "vendor_b".into()]
}
fn default_alpha() -> f64 {
    0.1
}
fn default_target_risk() -> f64 {
    0.05
}
fn default_ece_bins() -> usize {
    15
}
fn default_lime_samples() -> usize {
    1000
}
fn default_kernel_width() -> f64 {
    0.25
}
fn default_repeats() -> usize {
    5
}

/// Geometry of the synthetic images and their planted signal.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthImageConfig {
    #[serde(default = "default_image_side")]
    pub h: usize,
    #[serde(default = "default_image_side")]
    pub w: usize,
    /// Grid superpixel edge length in pixels.
    #[serde(default = "default_image_cell")]
    pub cell: usize,
    /// Planted-class probability while the planted superpixel is intact.
    #[serde(default = "default_image_hi")]
    pub hi: f64,
    /// Planted-class probability once the planted superpixel is overwritten.
    #[serde(default = "default_image_lo")]
    pub lo: f64,
}

impl Default for SynthImageConfig {
    fn default() -> Self {
        Self {
            h: default_image_side(),
            w: default_image_side(),
            cell: default_image_cell(),
            hi: default_image_hi(),
            lo: default_image_lo(),
        }
    }
}

/// Config for the synthetic fixture generator.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    #[serde(default = "default_n_calibration")]
    pub n_calibration: usize,
    #[serde(default = "default_n_evaluation")]
    pub n_evaluation: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    /// Stochastic forward passes per sample in the pass stack.
    #[serde(default = "default_t_passes")]
    pub t_passes: usize,
    /// Ground-truth miscalibration: observed logits are `c * z` where labels
    /// are drawn from `softmax(z)`, so the ideal temperature is `c`.
    #[serde(default = "default_one")]
    pub miscalibration_c: f64,
    /// Standard deviation of the base logits.
    #[serde(default = "default_logit_scale")]
    pub logit_scale: f64,
    /// Standard deviation of per-pass logit noise.
    #[serde(default = "default_pass_noise")]
    pub pass_noise: f64,
    #[serde(default)]
    pub image: SynthImageConfig,
    /// Group values assigned uniformly at random to samples.
    #[serde(default = "default_vendors")]
    pub vendors: Vec<String>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all synth fields have defaults")
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(CliError::Validation(msg));
        if self.k < 2 {
            return fail(format!("k must be at least 2, got {}", self.k));
        }
        if self.n_calibration < 10 {
            return fail(format!(
                "n_calibration must be at least 10 to support a temperature fit, got {}",
                self.n_calibration
            ));
        }
        if self.n_evaluation == 0 {
            return fail("n_evaluation must be positive".into());
        }
        if self.t_passes < 2 {
            return fail(format!(
                "t_passes must be at least 2 for pass-spread uncertainty, got {}",
                self.t_passes
            ));
        }
        if !(self.miscalibration_c.is_finite() && self.miscalibration_c > 0.0) {
            return fail(format!(
                "miscalibration_c must be a positive real, got {}",
                self.miscalibration_c
            ));
        }
        if !(self.logit_scale.is_finite() && self.logit_scale > 0.0) {
            return fail(format!(
                "logit_scale must be a positive real, got {}",
                self.logit_scale
            ));
        }
        if !(self.pass_noise.is_finite() && self.pass_noise >= 0.0) {
            return fail(format!(
                "pass_noise must be a non-negative real, got {}",
                self.pass_noise
            ));
        }
        let img = &self.image;
        if img.h == 0 || img.w == 0 || img.cell == 0 {
            return fail(format!(
                "image dimensions and cell must be positive, got {}x{} cell {}",
                img.h, img.w, img.cell
            ));
        }
        for (name, v) in [("hi", img.hi), ("lo", img.lo)] {
            if !(v.is_finite() && v > 0.0 && v < 1.0) {
                return fail(format!("image.{name} must lie strictly inside (0, 1), got {v}"));
            }
        }
        if img.hi <= img.lo {
            return fail(format!(
                "image.hi ({}) must exceed image.lo ({})",
                img.hi, img.lo
            ));
        }
        if self.vendors.is_empty() {
            return fail("vendors must list at least one group value".into());
        }
        Ok(())
    }
}

/// Config for the temperature-calibration command.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateConfig {
    pub logits: PathBuf,
    pub manifest: PathBuf,
    pub split: PathBuf,
    #[serde(default = "default_ece_bins")]
    pub ece_bins: usize,
}

/// Which tensor feeds the probability pipeline.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SourceKind {
    Probabilities(PathBuf),
    Logits(PathBuf),
    Passes(PathBuf),
}

/// Picks exactly one of the three tensor sources.
pub fn exactly_one_source(
    probabilities: &Option<PathBuf>,
    logits: &Option<PathBuf>,
    passes: &Option<PathBuf>,
) -> Result<SourceKind> {
    let given = [probabilities.is_some(), logits.is_some(), passes.is_some()]
        .iter()
        .filter(|b| **b)
        .count();
    if given != 1 {
        return Err(CliError::validation(format!(
            "config must set exactly one of `probabilities`, `logits`, `passes`; found {given}"
        )));
    }
    Ok(if let Some(p) = probabilities {
        SourceKind::Probabilities(p.clone())
    } else if let Some(p) = logits {
        SourceKind::Logits(p.clone())
    } else {
        SourceKind::Passes(passes.clone().expect("one source is set"))
    })
}

/// Config for the full-report command.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    pub manifest: PathBuf,
    pub split: PathBuf,
    pub probabilities: Option<PathBuf>,
    pub logits: Option<PathBuf>,
    pub passes: Option<PathBuf>,
    /// Calibration artifact whose temperature is applied to logit sources.
    pub calibration: Option<PathBuf>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Randomized conformal scores (requires `--seed`).
    #[serde(default)]
    pub randomized: bool,
    #[serde(default = "default_target_risk")]
    pub target_risk: f64,
    /// Manifest group column for stratified metrics.
    pub group_by: Option<String>,
    #[serde(default = "default_ece_bins")]
    pub ece_bins: usize,
}

/// Config for the conformal-only command.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConformalConfig {
    pub manifest: PathBuf,
    pub split: PathBuf,
    pub probabilities: Option<PathBuf>,
    pub logits: Option<PathBuf>,
    pub passes: Option<PathBuf>,
    pub calibration: Option<PathBuf>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub randomized: bool,
}

/// Config for the selective-prediction command.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectConfig {
    pub manifest: PathBuf,
    pub split: PathBuf,
    pub probabilities: Option<PathBuf>,
    pub logits: Option<PathBuf>,
    pub passes: Option<PathBuf>,
    pub calibration: Option<PathBuf>,
    #[serde(default = "default_target_risk")]
    pub target_risk: f64,
}

/// Where the superpixel segmentation comes from.
#[derive(Debug, Clone, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SegmentationSource {
    /// Square grid cells of the given edge length.
    Grid { cell: usize },
    /// Integer label tensor on disk (`H x W`, ids `0..S`).
    File { path: PathBuf },
}

/// Config for the explanation command.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplainConfig {
    /// Image tensor: `H x W` or a `B x H x W` batch.
    pub images: PathBuf,
    /// Which image of a batch to explain.
    #[serde(default)]
    pub image_index: usize,
    /// Oracle spec JSON (builtin or subprocess).
    pub oracle: PathBuf,
    pub segmentation: SegmentationSource,
    /// Class whose probability the surrogate explains.
    pub class_index: usize,
    #[serde(default = "default_lime_samples")]
    pub n_samples: usize,
    #[serde(default = "default_kernel_width")]
    pub kernel_width: f64,
    #[serde(default = "default_one")]
    pub ridge_lambda: f64,
    #[serde(default)]
    pub fill: uqcal_core::explain::FillMode,
    /// Seeds used for the stability estimate (consecutive from `--seed`).
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    /// Fixed normalized uncertainty in `[0, 1]` for reliability weighting.
    pub u_norm: Option<f64>,
    /// Derive the normalized uncertainty from the oracle's prediction on
    /// the unperturbed image (entropy over `ln K`).
    #[serde(default)]
    pub u_from_prediction: bool,
}

impl ExplainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.u_norm.is_some() && self.u_from_prediction {
            return Err(CliError::validation(
                "set either `u_norm` or `u_from_prediction`, not both",
            ));
        }
        if let Some(u) = self.u_norm {
            if !(u.is_finite() && (0.0..=1.0).contains(&u)) {
                return Err(CliError::validation(format!(
                    "u_norm must lie in [0, 1], got {u}"
                )));
            }
        }
        if self.repeats < 2 {
            return Err(CliError::validation(format!(
                "repeats must be at least 2 for a stability estimate, got {}",
                self.repeats
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synth_defaults_parse_and_validate() {
        let c = SynthConfig::default();
        assert_eq!(c.n_calibration, 500);
        assert_eq!(c.n_evaluation, 1000);
        assert_eq!(c.k, 6);
        assert_eq!(c.t_passes, 8);
        assert_eq!(c.miscalibration_c, 1.0);
        assert_eq!(c.image.h, 16);
        assert_eq!(c.image.cell, 4);
        c.validate().unwrap();
    }

    #[test]
    fn synth_rejects_bad_values() {
        for json in [
            r#"{"k": 1}"#,
            r#"{"n_calibration": 5}"#,
            r#"{"miscalibration_c": 0.0}"#,
            r#"{"pass_noise": -0.1}"#,
            r#"{"image": {"cell": 0}}"#,
            r#"{"image": {"hi": 0.1, "lo": 0.9}}"#,
            r#"{"vendors": []}"#,
        ] {
            let c: SynthConfig = serde_json::from_str(json).unwrap();
            assert!(c.validate().is_err(), "{json} should be rejected");
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<SynthConfig>(r#"{"n_cal": 5}"#);
        assert!(err.is_err());
        let err = serde_json::from_str::<ReportConfig>(
            r#"{"manifest": "m.csv", "split": "s.json", "alpa": 0.1}"#,
        );
        assert!(err.is_err());
    }

    #[test]
    fn source_selection_requires_exactly_one() {
        let p = Some(PathBuf::from("p.npy"));
        let none: Option<PathBuf> = None;
        assert!(matches!(
            exactly_one_source(&p, &none, &none).unwrap(),
            SourceKind::Probabilities(_)
        ));
        assert!(exactly_one_source(&none, &none, &none).is_err());
        assert!(exactly_one_source(&p, &p, &none).is_err());
    }

    #[test]
    fn explain_config_parses_segmentation_variants() {
        let grid: ExplainConfig = serde_json::from_str(
            r#"{"images": "i.npy", "oracle": "o.json",
                "segmentation": {"grid": {"cell": 4}}, "class_index": 0}"#,
        )
        .unwrap();
        assert!(matches!(grid.segmentation, SegmentationSource::Grid { cell: 4 }));
        grid.validate().unwrap();

        let file: ExplainConfig = serde_json::from_str(
            r#"{"images": "i.npy", "oracle": "o.json",
                "segmentation": {"file": {"path": "seg.npy"}}, "class_index": 2,
                "u_norm": 0.5}"#,
        )
        .unwrap();
        assert!(matches!(file.segmentation, SegmentationSource::File { .. }));
        file.validate().unwrap();
    }

    #[test]
    fn explain_config_rejects_conflicting_uncertainty_sources() {
        let both: ExplainConfig = serde_json::from_str(
            r#"{"images": "i.npy", "oracle": "o.json",
                "segmentation": {"grid": {"cell": 4}}, "class_index": 0,
                "u_norm": 0.5, "u_from_prediction": true}"#,
        )
        .unwrap();
        assert!(both.validate().is_err());
        let bad_u: ExplainConfig = serde_json::from_str(
            r#"{"images": "i.npy", "oracle": "o.json",
                "segmentation": {"grid": {"cell": 4}}, "class_index": 0,
                "u_norm": 1.5}"#,
        )
        .unwrap();
        assert!(bad_u.validate().is_err());
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let dir = Path::new("/data/run1");
        assert_eq!(
            resolve(dir, Path::new("logits.npy")),
            PathBuf::from("/data/run1/logits.npy")
        );
        assert_eq!(resolve(dir, Path::new("/abs/x.npy")), PathBuf::from("/abs/x.npy"));
    }
}
