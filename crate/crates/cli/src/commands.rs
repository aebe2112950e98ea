//! Subcommand implementations.
//!
//! Each `run_*` function loads its JSON config, validates inputs (exiting
//! with status 2 before anything is written), computes through the core
//! library, and writes its artifact bundle atomically into `--out`.
//! Fitting happens on the calibration split; every reported metric comes
//! from the evaluation split.

use crate::config::{self, SegmentationSource};
use crate::error::{CliError, Result};
use crate::fsio::{atomic_write, write_json};
use crate::manifest::{gather_rows, Manifest, Split};
use crate::npy;
use crate::oracle_adapter;
use crate::provenance::Provenance;
use crate::report::{
    apply_policy, conformal_section, decisions_csv, stratified_summaries, AccuracySection,
    CalibrationSection, Conventions, OutOfScopeSection, PolicyFit, Report, SelectiveSection,
    StratifiedSection, UncertaintySummary, WorkflowSection,
};
use crate::source::{load_bundle, CalibrationArtifact, DataBundle};
use crate::svg;
use crate::synth;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::path::Path;
use uqcal_core::calibration::{apply_temperature, fit_temperature};
use uqcal_core::conformal::{
    aps_scores, conformal_quantile, coverage_report, prediction_set, ConformalCalibration,
    CoverageReport, PredictionSet,
};
use uqcal_core::explain::{
    grid_superpixels, lime_explain, reliability_weighted_map, stability_from_explanations,
    top_superpixel, weights_to_map, LimeConfig, SaliencyStack,
};
use uqcal_core::metrics::{brier, classification_report, ece, stratified_report};
use uqcal_core::oracle::{predict_checked, BuiltinParams, OracleSpec};
use uqcal_core::prob::{LabelVector, LogitsMatrix};
use uqcal_core::saliency::normalize_map;
use uqcal_core::selective::{risk_coverage_curve, threshold_for_target_risk};
use uqcal_core::uncertainty::{normalize_uncertainty, predictive_entropy};

fn require_seed(seed: Option<u64>, why: &str) -> Result<u64> {
    seed.ok_or_else(|| CliError::validation(format!("--seed is required {why}")))
}

// ---------------------------------------------------------------------------
// synth

#[derive(Serialize)]
struct SynthMeta {
    true_temperature: f64,
    logit_scale: f64,
    pass_noise: f64,
    k: usize,
    t_passes: usize,
    n_calibration: usize,
    n_evaluation: usize,
    image_h: usize,
    image_w: usize,
    image_cell: usize,
    s_count: usize,
    /// Planted superpixel id per class (`class mod s_count`).
    planted_superpixels: Vec<usize>,
    oracle_hi: f64,
    oracle_lo: f64,
}

/// Generates a synthetic fixture directory.
pub fn run_synth(seed: Option<u64>, config_path: &Path, out: &Path) -> Result<()> {
    let seed = require_seed(seed, "for the synth command")?;
    let cfg = config::load::<config::SynthConfig>(config_path)?;
    let c = &cfg.value;
    c.validate()?;
    let data = synth::generate(c, seed)?;
    let manifest = synth::build_manifest(c, &data)?;
    let split = synth::build_split(c, &manifest);
    let n_total = data.n_total();
    let img = &c.image;

    npy::write_f64(&out.join("logits.npy"), &[n_total, c.k], &data.observed_logits)?;
    npy::write_f64(
        &out.join("passes.npy"),
        &[c.t_passes, n_total, c.k],
        &data.passes,
    )?;
    npy::write_f64(&out.join("images.npy"), &[c.k, img.h, img.w], &data.images)?;
    npy::write_i64(&out.join("segmentation.npy"), &[img.h, img.w], &data.segmentation)?;
    manifest.write(&out.join("manifest.csv"))?;
    split.write(&out.join("split.json"))?;

    let oracle = OracleSpec::Builtin {
        name: "planted".into(),
        params: BuiltinParams {
            superpixel: Some(data.planted[0]),
            class_index: Some(0),
            k: Some(c.k),
            hi: Some(img.hi),
            lo: Some(img.lo),
            reference: Some("images.npy".into()),
            reference_index: Some(0),
            segmentation: Some("segmentation.npy".into()),
            ..BuiltinParams::default()
        },
        batch_limit: 64,
        reentrant: true,
    };
    oracle
        .validate()
        .map_err(|e| CliError::computation(format!("generated oracle spec is invalid: {e}")))?;
    write_json(&out.join("oracle.json"), &oracle)?;

    write_json(
        &out.join("synth_meta.json"),
        &SynthMeta {
            true_temperature: c.miscalibration_c,
            logit_scale: c.logit_scale,
            pass_noise: c.pass_noise,
            k: c.k,
            t_passes: c.t_passes,
            n_calibration: c.n_calibration,
            n_evaluation: c.n_evaluation,
            image_h: img.h,
            image_w: img.w,
            image_cell: img.cell,
            s_count: data.s_count,
            planted_superpixels: data.planted.clone(),
            oracle_hi: img.hi,
            oracle_lo: img.lo,
        },
    )?;
    write_json(
        &out.join("provenance.json"),
        &Provenance::new("synth", Some(seed), &cfg.bytes),
    )?;
    println!(
        "synth: {} samples ({} calibration / {} evaluation), K = {}, true temperature {}",
        n_total, c.n_calibration, c.n_evaluation, c.k, c.miscalibration_c
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// calibrate

/// Fits a temperature on the calibration split and evaluates the effect on
/// the evaluation split.
pub fn run_calibrate(seed: Option<u64>, config_path: &Path, out: &Path) -> Result<()> {
    let cfg = config::load::<config::CalibrateConfig>(config_path)?;
    let c = &cfg.value;
    let mut prov = Provenance::new("calibrate", seed, &cfg.bytes);

    let manifest_abs = config::resolve(&cfg.dir, &c.manifest);
    let split_abs = config::resolve(&cfg.dir, &c.split);
    let logits_abs = config::resolve(&cfg.dir, &c.logits);
    let manifest = Manifest::read(&manifest_abs)?;
    let split = Split::read(&split_abs)?;
    let indices = split.resolve(&manifest)?;
    prov.add_input(&c.manifest, &manifest_abs)?;
    prov.add_input(&c.split, &split_abs)?;

    let tensor = npy::read(&logits_abs)?;
    let [n, k] = tensor.shape.as_slice() else {
        return Err(CliError::validation(format!(
            "{}: logits must be an N x K tensor, found shape {:?}",
            logits_abs.display(),
            tensor.shape
        )));
    };
    if *n != manifest.len() || *k != manifest.k {
        return Err(CliError::validation(format!(
            "{}: shape {n} x {k} does not match the manifest ({} samples, {} classes)",
            logits_abs.display(),
            manifest.len(),
            manifest.k
        )));
    }
    let data = tensor.as_f64(&logits_abs)?;
    prov.add_input(&c.logits, &logits_abs)?;

    let labels = |rows: &[usize]| -> Result<LabelVector> {
        let y: Vec<usize> = rows.iter().map(|&i| manifest.rows[i].label).collect();
        LabelVector::new(y, manifest.k).map_err(CliError::from)
    };
    let cal_z = LogitsMatrix::new(
        gather_rows(data, *k, &indices.calibration),
        indices.calibration.len(),
        *k,
    )?;
    let cal_y = labels(&indices.calibration)?;
    let fit = fit_temperature(&cal_z, &cal_y)?;

    let eval_z = LogitsMatrix::new(
        gather_rows(data, *k, &indices.evaluation),
        indices.evaluation.len(),
        *k,
    )?;
    let eval_y = labels(&indices.evaluation)?;
    let before = apply_temperature(&eval_z, 1.0)?;
    let after = apply_temperature(&eval_z, fit.temperature)?;
    let (ece_before, _) = ece(&before, &eval_y, c.ece_bins)?;
    let (ece_after, _) = ece(&after, &eval_y, c.ece_bins)?;
    let brier_before = brier(&before, &eval_y)?;
    let brier_after = brier(&after, &eval_y)?;

    let artifact = CalibrationArtifact {
        temperature: fit.temperature,
        nll_before: fit.nll_before,
        nll_after: fit.nll_after,
        ece_before,
        ece_after,
        brier_before,
        brier_after,
        n_calibration: indices.calibration.len(),
        n_evaluation: indices.evaluation.len(),
        k: *k,
        ece_bins: c.ece_bins,
        provenance: prov,
    };
    write_json(&out.join("calibration.json"), &artifact)?;
    println!(
        "calibrate: T* = {:.4}, NLL {:.4} -> {:.4}, evaluation ECE {:.4} -> {:.4}",
        fit.temperature, fit.nll_before, fit.nll_after, ece_before, ece_after
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// conformal helpers shared by `conformal` and `report`

struct ConformalRun {
    cal: ConformalCalibration<f64>,
    sets: Vec<PredictionSet>,
    coverage: CoverageReport<f64>,
    randomized_rule_coverage: Option<f64>,
}

/// Calibrates the score threshold on the calibration split and builds
/// evaluation prediction sets. For randomized runs one ChaCha8 stream
/// (from `--seed`) supplies the calibration draws and then the evaluation
/// draws used for the randomized-rule coverage.
fn conformal_run(bundle: &DataBundle, alpha: f64, randomized: bool, seed: Option<u64>) -> Result<ConformalRun> {
    let mut rng = match (randomized, seed) {
        (true, Some(seed)) => Some(ChaCha8Rng::seed_from_u64(seed)),
        (true, None) => {
            return Err(CliError::validation(
                "--seed is required when conformal scores are randomized",
            ))
        }
        (false, _) => None,
    };
    let cal_us: Option<Vec<f64>> = rng
        .as_mut()
        .map(|rng| (0..bundle.cal.probs.n()).map(|_| rng.gen::<f64>()).collect());
    let scores = aps_scores(&bundle.cal.probs, &bundle.cal.labels, cal_us.as_deref())?;
    let cal = conformal_quantile(&scores, alpha, randomized)?;

    let sets: Vec<PredictionSet> = (0..bundle.eval.probs.n())
        .map(|i| prediction_set(&bundle.eval.probs.row_vector(i), &cal))
        .collect();
    let coverage = coverage_report(&sets, &bundle.eval.labels)?;

    let randomized_rule_coverage = match rng.as_mut() {
        Some(rng) => {
            let eval_us: Vec<f64> = (0..bundle.eval.probs.n()).map(|_| rng.gen::<f64>()).collect();
            let eval_scores = aps_scores(&bundle.eval.probs, &bundle.eval.labels, Some(&eval_us))?;
            let below = eval_scores.iter().filter(|&&s| s <= cal.qhat).count();
            Some(below as f64 / eval_scores.len() as f64)
        }
        None => None,
    };
    Ok(ConformalRun { cal, sets, coverage, randomized_rule_coverage })
}

fn sets_csv(bundle: &DataBundle, sets: &[PredictionSet]) -> Result<Vec<u8>> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| CliError::computation(format!("sets CSV: {e}"));
    writer
        .write_record(["sample_id", "label", "prediction", "confidence", "set_size", "set_members", "in_set"])
        .map_err(to_err)?;
    for (i, set) in sets.iter().enumerate() {
        let row = bundle.eval.rows[i];
        let label = bundle.eval.labels.as_slice()[i];
        let members: Vec<String> = set.members.iter().map(|m| m.to_string()).collect();
        writer
            .write_record([
                bundle.manifest.rows[row].sample_id.as_str(),
                &label.to_string(),
                &bundle.eval.probs.argmax_row(i).to_string(),
                &crate::fsio::fmt_f64(bundle.eval.probs.confidence_row(i)),
                &set.size().to_string(),
                &members.join("|"),
                &set.contains(label).to_string(),
            ])
            .map_err(to_err)?;
    }
    writer
        .into_inner()
        .map_err(|e| CliError::computation(format!("sets CSV: {e}")))
}

#[derive(Serialize)]
struct ConformalArtifact {
    alpha: f64,
    qhat: f64,
    n_calibration: usize,
    n_evaluation: usize,
    randomized: bool,
    set_coverage: f64,
    mean_set_size: f64,
    size_histogram: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    randomized_rule_coverage: Option<f64>,
    nominal_coverage: crate::report::NominalCoverage,
    provenance: Provenance,
}

/// Split-conformal prediction sets for the evaluation split.
pub fn run_conformal(seed: Option<u64>, config_path: &Path, out: &Path) -> Result<()> {
    let cfg = config::load::<config::ConformalConfig>(config_path)?;
    let c = &cfg.value;
    let mut prov = Provenance::new("conformal", seed, &cfg.bytes);
    let bundle = load_bundle(
        &cfg.dir,
        &c.manifest,
        &c.split,
        &c.probabilities,
        &c.logits,
        &c.passes,
        &c.calibration,
        &mut prov,
    )?;
    let run = conformal_run(&bundle, c.alpha, c.randomized, seed)?;
    let (lower, upper) = uqcal_core::conformal::nominal_coverage_bounds(&run.cal);
    let artifact = ConformalArtifact {
        alpha: run.cal.alpha,
        qhat: run.cal.qhat,
        n_calibration: run.cal.n_cal,
        n_evaluation: bundle.eval.probs.n(),
        randomized: run.cal.randomized,
        set_coverage: run.coverage.coverage,
        mean_set_size: run.coverage.mean_size,
        size_histogram: run.coverage.size_histogram.clone(),
        randomized_rule_coverage: run.randomized_rule_coverage,
        nominal_coverage: crate::report::NominalCoverage { lower, upper },
        provenance: prov,
    };
    write_json(&out.join("conformal.json"), &artifact)?;
    atomic_write(&out.join("sets.csv"), &sets_csv(&bundle, &run.sets)?)?;
    println!(
        "conformal: alpha = {}, qhat = {:.4}, set coverage = {:.4}, mean set size = {:.3}",
        run.cal.alpha, run.cal.qhat, run.coverage.coverage, run.coverage.mean_size
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// select

#[derive(Serialize)]
struct SelectiveArtifact {
    selective_prediction: SelectiveSection,
    n_evaluation: usize,
    provenance: Provenance,
}

fn selective_section(bundle: &DataBundle, target_risk: f64) -> Result<(SelectiveSection, crate::report::PolicyApplication)> {
    let confidences = |view: &crate::source::SplitView| -> Vec<f64> {
        (0..view.probs.n()).map(|i| view.probs.confidence_row(i)).collect()
    };
    let correct = |view: &crate::source::SplitView| -> Vec<bool> {
        (0..view.probs.n())
            .map(|i| view.probs.argmax_row(i) == view.labels.as_slice()[i])
            .collect()
    };
    let cal_curve = risk_coverage_curve(&confidences(&bundle.cal), &correct(&bundle.cal))?;
    let policy = threshold_for_target_risk(&cal_curve, target_risk)?;
    let eval_curve = risk_coverage_curve(&confidences(&bundle.eval), &correct(&bundle.eval))?;
    let app = apply_policy(&bundle.eval.probs, &bundle.eval.labels, &policy);
    let section = SelectiveSection {
        target_risk,
        threshold: policy.threshold,
        achieved_risk: app.achieved_risk,
        abstention_rate: app.abstention_rate,
        coverage: app.coverage,
        aurc: eval_curve.aurc,
        calibration_fit: PolicyFit {
            achieved_risk: policy.achieved_risk,
            abstention_rate: policy.abstention_rate,
            coverage: policy.coverage,
        },
        curve: eval_curve.points,
    };
    Ok((section, app))
}

/// Risk-coverage analysis and an abstention policy for a target risk.
pub fn run_select(seed: Option<u64>, config_path: &Path, out: &Path) -> Result<()> {
    let cfg = config::load::<config::SelectConfig>(config_path)?;
    let c = &cfg.value;
    let mut prov = Provenance::new("select", seed, &cfg.bytes);
    let bundle = load_bundle(
        &cfg.dir,
        &c.manifest,
        &c.split,
        &c.probabilities,
        &c.logits,
        &c.passes,
        &c.calibration,
        &mut prov,
    )?;
    let (section, app) = selective_section(&bundle, c.target_risk)?;

    let curve_for_svg = uqcal_core::selective::RiskCoverageCurve {
        points: section.curve.clone(),
        aurc: section.aurc,
    };
    let policy_marker = uqcal_core::selective::SelectivePolicy {
        threshold: section.threshold,
        target_risk: section.target_risk,
        achieved_risk: section.achieved_risk,
        abstention_rate: section.abstention_rate,
        coverage: section.coverage,
    };
    atomic_write(
        &out.join("risk_coverage.svg"),
        svg::risk_coverage_svg(&curve_for_svg, Some(&policy_marker)).as_bytes(),
    )?;
    let ids: Vec<&str> = bundle
        .eval
        .rows
        .iter()
        .map(|&r| bundle.manifest.rows[r].sample_id.as_str())
        .collect();
    atomic_write(
        &out.join("decisions.csv"),
        &decisions_csv(&ids, &bundle.eval.labels, &bundle.eval.probs, &app.decisions, &[])?,
    )?;
    let artifact = SelectiveArtifact {
        selective_prediction: section,
        n_evaluation: bundle.eval.probs.n(),
        provenance: prov,
    };
    write_json(&out.join("selective.json"), &artifact)?;
    let section = &artifact.selective_prediction;
    println!(
        "select: target risk = {}, threshold = {}, evaluation coverage = {:.4}, achieved risk = {}",
        section.target_risk,
        section
            .threshold
            .map_or("none (abstain all)".to_string(), |t| format!("{t:.4}")),
        section.coverage,
        section
            .achieved_risk
            .map_or("n/a".to_string(), |r| format!("{r:.4}")),
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// report

/// The full evaluation report bundle: JSON, two SVGs, and a decisions CSV.
pub fn run_report(seed: Option<u64>, config_path: &Path, out: &Path) -> Result<()> {
    let cfg = config::load::<config::ReportConfig>(config_path)?;
    let c = &cfg.value;
    let mut prov = Provenance::new("report", seed, &cfg.bytes);
    let bundle = load_bundle(
        &cfg.dir,
        &c.manifest,
        &c.split,
        &c.probabilities,
        &c.logits,
        &c.passes,
        &c.calibration,
        &mut prov,
    )?;
    let eval = &bundle.eval;

    let class_report = classification_report(&eval.probs, &eval.labels)?;
    let (ece_value, bins) = ece(&eval.probs, &eval.labels, c.ece_bins)?;
    let brier_value = brier(&eval.probs, &eval.labels)?;
    let conformal = conformal_run(&bundle, c.alpha, c.randomized, seed)?;
    let (selective, app) = selective_section(&bundle, c.target_risk)?;

    let uncertainty = eval.uncertainty.as_ref().map(|u| {
        let n = u.entropy.len() as f64;
        UncertaintySummary {
            mean_entropy: u.entropy.iter().sum::<f64>() / n,
            mean_mutual_information: u.mutual_information.iter().sum::<f64>() / n,
            mean_disagreement: u.disagreement.iter().sum::<f64>() / n,
            t_passes: bundle.t_passes.unwrap_or(0),
        }
    });

    let stratified = match &c.group_by {
        Some(key) => {
            let col = bundle.manifest.group_column(key)?;
            let groups: Vec<String> = eval
                .rows
                .iter()
                .map(|&r| bundle.manifest.rows[r].groups[col].clone())
                .collect();
            let strata = stratified_report(&eval.probs, &eval.labels, &groups, c.ece_bins)?;
            StratifiedSection {
                group_by: Some(key.clone()),
                strata: stratified_summaries(&strata, &groups, &conformal.sets, &eval.labels),
            }
        }
        None => StratifiedSection { group_by: None, strata: Vec::new() },
    };

    let report = Report {
        accuracy: AccuracySection::from_report(eval.probs.n(), &class_report),
        calibration: CalibrationSection {
            ece: ece_value,
            brier: brier_value,
            method: bundle.method.to_string(),
            temperature: bundle.temperature,
            reliability_bins: bins.clone(),
            uncertainty,
            conformal: conformal_section(
                &conformal.cal,
                &conformal.coverage,
                conformal.randomized_rule_coverage,
            ),
        },
        selective_prediction: selective,
        explainability: OutOfScopeSection::new(
            "superpixel attributions, stability intervals, and reliability-weighted maps \
             are produced by the explain command, not this report",
        ),
        workflow: WorkflowSection {
            low_confidence_action: "escalate".into(),
            decisions_csv: "decisions.csv".into(),
            accepted: app.accepted,
            escalated: app.escalated,
            abstention_rate: app.abstention_rate,
        },
        quality_score: Report::reserved_quality_score(),
        stratified,
        conventions: Conventions::new(c.ece_bins),
        provenance: prov,
    };

    write_json(&out.join("report.json"), &report)?;
    atomic_write(
        &out.join("reliability.svg"),
        svg::reliability_svg(&bins, ece_value).as_bytes(),
    )?;
    let eval_curve = uqcal_core::selective::RiskCoverageCurve {
        points: report.selective_prediction.curve.clone(),
        aurc: report.selective_prediction.aurc,
    };
    let policy_marker = uqcal_core::selective::SelectivePolicy {
        threshold: report.selective_prediction.threshold,
        target_risk: report.selective_prediction.target_risk,
        achieved_risk: report.selective_prediction.achieved_risk,
        abstention_rate: report.selective_prediction.abstention_rate,
        coverage: report.selective_prediction.coverage,
    };
    atomic_write(
        &out.join("risk_coverage.svg"),
        svg::risk_coverage_svg(&eval_curve, Some(&policy_marker)).as_bytes(),
    )?;
    let ids: Vec<&str> = eval
        .rows
        .iter()
        .map(|&r| bundle.manifest.rows[r].sample_id.as_str())
        .collect();
    atomic_write(
        &out.join("decisions.csv"),
        &decisions_csv(&ids, &eval.labels, &eval.probs, &app.decisions, &conformal.sets)?,
    )?;
    println!(
        "report: top-1 = {:.4}, ECE = {:.4}, Brier = {:.4}, set coverage = {:.4}, abstention = {:.4}",
        report.accuracy.top1_accuracy,
        report.calibration.ece,
        report.calibration.brier,
        report.calibration.conformal.set_coverage,
        report.workflow.abstention_rate
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// explain

#[derive(Serialize)]
struct StabilityBlock {
    mean_weights: Vec<f64>,
    std_weights: Vec<f64>,
    ci_low: Vec<f64>,
    ci_high: Vec<f64>,
    mean_fidelity_r2: f64,
    n_repeats: usize,
    low_repeats: bool,
}

#[derive(Serialize)]
struct ExplainArtifact {
    explained_class: usize,
    image_index: usize,
    seed: u64,
    seeds: Vec<u64>,
    n_samples: usize,
    kernel_width: f64,
    ridge_lambda: f64,
    fill: uqcal_core::explain::FillMode,
    s_count: usize,
    weights: Vec<f64>,
    intercept: f64,
    fidelity_r2: f64,
    top_superpixel: Option<usize>,
    stability: StabilityBlock,
    /// Normalized uncertainty used for the reliability-weighted map.
    u_norm: Option<f64>,
    /// `"config"` when fixed in the config, `"prediction"` when derived
    /// from the oracle's unperturbed prediction entropy.
    u_source: Option<String>,
    provenance: Provenance,
}

/// Black-box explanation bundle for one image and class.
pub fn run_explain(seed: Option<u64>, config_path: &Path, out: &Path) -> Result<()> {
    let seed = require_seed(seed, "for the explain command")?;
    let cfg = config::load::<config::ExplainConfig>(config_path)?;
    let c = &cfg.value;
    c.validate()?;
    let mut prov = Provenance::new("explain", Some(seed), &cfg.bytes);

    let images_abs = config::resolve(&cfg.dir, &c.images);
    let image = oracle_adapter::load_image(&images_abs, c.image_index)?;
    prov.add_input(&c.images, &images_abs)?;

    let seg = match &c.segmentation {
        SegmentationSource::Grid { cell } => {
            grid_superpixels(image.h(), image.w(), *cell)?
        }
        SegmentationSource::File { path } => {
            let abs = config::resolve(&cfg.dir, path);
            let seg = oracle_adapter::load_segmentation(&abs)?;
            prov.add_input(path, &abs)?;
            seg
        }
    };

    let oracle_abs = config::resolve(&cfg.dir, &c.oracle);
    let (spec, spec_dir) = oracle_adapter::read_spec(&oracle_abs)?;
    prov.add_input(&c.oracle, &oracle_abs)?;
    let oracle = oracle_adapter::build(&spec, &spec_dir, &out.join("oracle_transcript"))?;

    let u_norm = if let Some(u) = c.u_norm {
        Some((u, "config"))
    } else if c.u_from_prediction {
        let probs = predict_checked(oracle.as_ref(), std::slice::from_ref(&image), 0, None)?;
        let row = probs.row_vector(0);
        if c.class_index >= row.k() {
            return Err(CliError::validation(format!(
                "class_index {} out of range for the oracle's {} classes",
                c.class_index,
                row.k()
            )));
        }
        let entropy = predictive_entropy(&row);
        let normalized = normalize_uncertainty(&[entropy], row.k())?;
        Some((normalized[0], "prediction"))
    } else {
        None
    };

    let lime_config = LimeConfig::<f64> {
        n_samples: c.n_samples,
        kernel_width: c.kernel_width,
        ridge_lambda: c.ridge_lambda,
        fill: c.fill,
        seed,
    };
    let seeds: Vec<u64> = (0..c.repeats as u64).map(|i| seed.wrapping_add(i)).collect();
    let mut runs = Vec::with_capacity(seeds.len());
    for &run_seed in &seeds {
        let run_config = LimeConfig { seed: run_seed, ..lime_config.clone() };
        runs.push(lime_explain(
            oracle.as_ref(),
            &image,
            &seg,
            c.class_index,
            &run_config,
        )?);
    }
    let stability = stability_from_explanations(&runs)?;
    let main = &runs[0];

    let maps: Vec<_> = runs
        .iter()
        .map(|run| Ok(normalize_map(&weights_to_map(&run.weights, &seg)?)))
        .collect::<Result<_>>()?;
    let stack = SaliencyStack::new(maps)?;
    let agg = uqcal_core::explain::aggregate_explanations(&stack);
    npy::write_f64(&out.join("mean_map.npy"), &[seg.h(), seg.w()], agg.mean.as_slice())?;
    npy::write_f64(
        &out.join("variance_map.npy"),
        &[seg.h(), seg.w()],
        agg.variance.as_slice(),
    )?;
    if let Some((u, _)) = u_norm {
        let s_rel = reliability_weighted_map(&normalize_map(&agg.mean), u)?;
        npy::write_f64(&out.join("s_rel.npy"), &[seg.h(), seg.w()], s_rel.as_slice())?;
    }

    // Weights CSV, ranked by influence.
    let mut order: Vec<usize> = (0..main.weights.len()).collect();
    order.sort_by(|&a, &b| {
        main.weights[b]
            .abs()
            .partial_cmp(&main.weights[a].abs())
            .expect("weights are finite")
            .then(a.cmp(&b))
    });
    let mut weights_csv = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| CliError::computation(format!("weights CSV: {e}"));
    weights_csv
        .write_record(["rank", "superpixel", "weight"])
        .map_err(to_err)?;
    for (rank, &s) in order.iter().enumerate() {
        weights_csv
            .write_record([
                (rank + 1).to_string(),
                s.to_string(),
                crate::fsio::fmt_f64(main.weights[s]),
            ])
            .map_err(to_err)?;
    }
    let weights_bytes = weights_csv
        .into_inner()
        .map_err(|e| CliError::computation(format!("weights CSV: {e}")))?;
    atomic_write(&out.join("weights.csv"), &weights_bytes)?;

    let mut stability_csv = csv::Writer::from_writer(Vec::new());
    stability_csv
        .write_record(["superpixel", "mean_weight", "std_weight", "ci_low", "ci_high"])
        .map_err(to_err)?;
    for s in 0..stability.mean_weights.len() {
        stability_csv
            .write_record([
                s.to_string(),
                crate::fsio::fmt_f64(stability.mean_weights[s]),
                crate::fsio::fmt_f64(stability.std_weights[s]),
                crate::fsio::fmt_f64(stability.ci_low[s]),
                crate::fsio::fmt_f64(stability.ci_high[s]),
            ])
            .map_err(to_err)?;
    }
    let stability_bytes = stability_csv
        .into_inner()
        .map_err(|e| CliError::computation(format!("stability CSV: {e}")))?;
    atomic_write(&out.join("stability.csv"), &stability_bytes)?;

    let artifact = ExplainArtifact {
        explained_class: c.class_index,
        image_index: c.image_index,
        seed,
        seeds,
        n_samples: c.n_samples,
        kernel_width: c.kernel_width,
        ridge_lambda: c.ridge_lambda,
        fill: c.fill,
        s_count: seg.s_count(),
        weights: main.weights.clone(),
        intercept: main.intercept,
        fidelity_r2: main.fidelity_r2,
        top_superpixel: top_superpixel(&main.weights),
        stability: StabilityBlock {
            mean_weights: stability.mean_weights,
            std_weights: stability.std_weights,
            ci_low: stability.ci_low,
            ci_high: stability.ci_high,
            mean_fidelity_r2: stability.mean_fidelity_r2,
            n_repeats: stability.n_repeats,
            low_repeats: stability.low_repeats,
        },
        u_norm: u_norm.map(|(u, _)| u),
        u_source: u_norm.map(|(_, s)| s.to_string()),
        provenance: prov,
    };
    write_json(&out.join("explanation.json"), &artifact)?;
    println!(
        "explain: class {}, top superpixel = {}, fidelity R^2 = {:.4}, {} repeats",
        artifact.explained_class,
        artifact
            .top_superpixel
            .map_or("n/a".to_string(), |s| s.to_string()),
        artifact.fidelity_r2,
        artifact.stability.n_repeats
    );
    Ok(())
}
