//! Perturbation-based explanations with uncertainty estimates.
//!
//! The centerpiece is a LIME-style routine: segment an image into
//! superpixels, sample random masks, replace masked-off superpixels with
//! fill values, query a black-box [`Oracle`](crate::oracle::Oracle) for the
//! perturbed images, and fit a locally weighted ridge surrogate whose
//! coefficients score each superpixel's influence on one class probability.
//!
//! On top of single explanations the module offers repeat runs with
//! confidence intervals over the surrogate weights, pixel-level aggregation
//! of saliency maps into mean/variance pairs, and reliability weighting that
//! attenuates a saliency map by the model's normalized uncertainty.

mod ridge;

use crate::error::{Error, Result};
use crate::oracle::{predict_checked, Image, Oracle};
use crate::prob::argmax;
use crate::saliency::SaliencyMap;
use crate::scalar::{real, real_usize, Real};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Default number of perturbed samples per explanation.
pub const DEFAULT_LIME_SAMPLES: usize = 1000;
/// Default locality kernel width on the mask-distance scale.
pub const DEFAULT_KERNEL_WIDTH: f64 = 0.25;
/// Default ridge penalty for the surrogate fit.
pub const DEFAULT_RIDGE_LAMBDA: f64 = 1.0;
/// Repeat counts below this are flagged as statistically weak.
pub const LOW_REPEATS_THRESHOLD: usize = 5;
/// Two-sided 95% normal quantile used for stability intervals.
const CI_Z: f64 = 1.96;

/// Assignment of each pixel to a superpixel id, row-major `H x W`.
///
/// Ids must form the contiguous range `0..s_count`: every id below the
/// maximum must actually occur.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMap {
    ids: Vec<usize>,
    h: usize,
    w: usize,
    members: Vec<Vec<usize>>,
}

impl SegmentationMap {
    pub fn new(ids: Vec<usize>, h: usize, w: usize) -> Result<Self> {
        if h == 0 || w == 0 || ids.is_empty() {
            return Err(Error::Empty {
                what: format!("segmentation with shape {h}x{w}"),
            });
        }
        if ids.len() != h * w {
            return Err(Error::ShapeMismatch {
                detail: format!(
                    "segmentation buffer length {} does not equal h*w = {}",
                    ids.len(),
                    h * w
                ),
            });
        }
        let s_count = ids.iter().max().copied().unwrap_or(0) + 1;
        let mut members = vec![Vec::new(); s_count];
        for (idx, &id) in ids.iter().enumerate() {
            members[id].push(idx);
        }
        if let Some(missing) = members.iter().position(|m| m.is_empty()) {
            return Err(Error::Segmentation {
                detail: format!(
                    "superpixel ids are not contiguous: id {missing} has no pixels but the maximum id is {}",
                    s_count - 1
                ),
            });
        }
        Ok(Self { ids, h, w, members })
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    /// Number of superpixels.
    pub fn s_count(&self) -> usize {
        self.members.len()
    }

    /// Row-major per-pixel superpixel ids.
    pub fn as_slice(&self) -> &[usize] {
        &self.ids
    }

    /// Pixel indices belonging to superpixel `s`.
    pub fn members(&self, s: usize) -> &[usize] {
        &self.members[s]
    }
}

/// Builds an axis-aligned grid segmentation with `cell x cell` superpixels
/// (edge cells are smaller when `cell` does not divide the image size).
/// Superpixel ids run row-major over grid cells. A cell size larger than the
/// shorter image side degrades, with a warning, to one superpixel covering
/// the whole image; for a 5x4 image with `cell = 2` this yields 3x2 = 6
/// superpixels.
pub fn grid_superpixels(h: usize, w: usize, cell: usize) -> Result<SegmentationMap> {
    if h == 0 || w == 0 {
        return Err(Error::Empty {
            what: format!("grid over a {h}x{w} image"),
        });
    }
    if cell == 0 {
        return Err(Error::InvalidParameter {
            name: "cell",
            detail: "grid cell size must be at least 1 pixel".into(),
        });
    }
    if cell > h.min(w) {
        log::warn!(
            "grid cell {cell} exceeds the shorter image side of a {h}x{w} image; using a single superpixel"
        );
        return SegmentationMap::new(vec![0; h * w], h, w);
    }
    let cells_x = w.div_ceil(cell);
    let mut ids = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            ids.push((y / cell) * cells_x + x / cell);
        }
    }
    SegmentationMap::new(ids, h, w)
}

/// How masked-off superpixels are replaced in perturbed images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FillMode {
    /// Replace each masked superpixel by its own mean intensity.
    #[default]
    SuperpixelMean,
    /// Replace masked superpixels by zero intensity.
    Zero,
}

/// Parameters for a LIME-style explanation run.
#[derive(Debug, Clone, PartialEq)]
pub struct LimeConfig<F: Real> {
    /// Total perturbed samples, including the unmasked first sample.
    pub n_samples: usize,
    /// Locality kernel width on the mask-distance scale.
    pub kernel_width: F,
    /// Ridge penalty for the surrogate coefficients.
    pub ridge_lambda: F,
    pub fill: FillMode,
    /// Seed for mask sampling; equal seeds give bitwise-equal results.
    pub seed: u64,
}

impl<F: Real> LimeConfig<F> {
    pub fn new(seed: u64) -> Self {
        Self {
            n_samples: DEFAULT_LIME_SAMPLES,
            kernel_width: real(DEFAULT_KERNEL_WIDTH),
            ridge_lambda: real(DEFAULT_RIDGE_LAMBDA),
            fill: FillMode::default(),
            seed,
        }
    }
}

/// Superpixel influence scores for one class of one image.
#[derive(Debug, Clone, Serialize)]
pub struct LimeExplanation<F: Real> {
    /// One surrogate coefficient per superpixel; positive values mean the
    /// superpixel's original content supports the explained class.
    pub weights: Vec<F>,
    pub intercept: F,
    /// Weighted R^2 of the surrogate on its own perturbation sample, in
    /// `[0, 1]`.
    pub fidelity_r2: F,
    pub n_samples: usize,
    pub seed: u64,
    pub explained_class: usize,
}

/// Aggregate of repeated explanations under different seeds.
#[derive(Debug, Clone, Serialize)]
pub struct LimeStability<F: Real> {
    pub mean_weights: Vec<F>,
    /// Per-superpixel sample standard deviation across repeats.
    pub std_weights: Vec<F>,
    /// Lower ends of per-superpixel 95% normal confidence intervals.
    pub ci_low: Vec<F>,
    /// Upper ends of per-superpixel 95% normal confidence intervals.
    pub ci_high: Vec<F>,
    pub mean_fidelity_r2: F,
    pub n_repeats: usize,
    /// True when fewer repeats ran than give a trustworthy interval.
    pub low_repeats: bool,
    pub explained_class: usize,
}

fn check_image_matches_segmentation<F: Real>(
    image: &Image<F>,
    seg: &SegmentationMap,
) -> Result<()> {
    if image.h() != seg.h() || image.w() != seg.w() {
        return Err(Error::ShapeMismatch {
            detail: format!(
                "image is {}x{} but segmentation is {}x{}",
                image.h(),
                image.w(),
                seg.h(),
                seg.w()
            ),
        });
    }
    Ok(())
}

/// Per-superpixel replacement intensities for the requested fill mode.
fn fill_values<F: Real>(image: &Image<F>, seg: &SegmentationMap, fill: FillMode) -> Vec<F> {
    match fill {
        FillMode::Zero => vec![F::zero(); seg.s_count()],
        FillMode::SuperpixelMean => (0..seg.s_count())
            .map(|s| {
                let members = seg.members(s);
                let sum: F = members.iter().map(|&idx| image.as_slice()[idx]).sum();
                sum / real_usize(members.len())
            })
            .collect(),
    }
}

/// Applies a mask: superpixels with `mask[s] == false` are overwritten by
/// their fill value.
fn perturbed_image<F: Real>(
    image: &Image<F>,
    seg: &SegmentationMap,
    mask: &[bool],
    fill: &[F],
) -> Image<F> {
    let mut out = image.clone();
    let data = out.as_mut_slice();
    for (s, &keep) in mask.iter().enumerate() {
        if !keep {
            for &idx in seg.members(s) {
                data[idx] = fill[s];
            }
        }
    }
    out
}

/// Explains one class probability of a black-box oracle around one image.
///
/// Masks are sampled with an explicit seed; the first sample is always the
/// unmasked image. Sample weights follow the locality kernel
/// `exp(-d^2 / kernel_width^2)` with `d = 1 - sqrt(active_fraction)`, so the
/// unmasked sample gets weight 1 and heavily masked samples fade out. The
/// surrogate is a weighted ridge fit with an unpenalized intercept.
pub fn lime_explain<F: Real>(
    oracle: &dyn Oracle<F>,
    image: &Image<F>,
    seg: &SegmentationMap,
    explained_class: usize,
    config: &LimeConfig<F>,
) -> Result<LimeExplanation<F>> {
    check_image_matches_segmentation(image, seg)?;
    if !config.kernel_width.is_finite() || config.kernel_width <= F::zero() {
        return Err(Error::InvalidParameter {
            name: "kernel_width",
            detail: format!("must be finite and positive, got {}", config.kernel_width),
        });
    }
    let s_count = seg.s_count();
    if config.n_samples < s_count + 1 {
        return Err(Error::UnderDetermined {
            n_samples: config.n_samples,
            s_count,
        });
    }
    let batch_limit = oracle.batch_limit();
    if batch_limit == 0 {
        return Err(Error::InvalidParameter {
            name: "batch_limit",
            detail: "oracle declares a batch limit of 0".into(),
        });
    }

    let fill = fill_values(image, seg, config.fill);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut masks: Vec<Vec<bool>> = Vec::with_capacity(config.n_samples);
    masks.push(vec![true; s_count]);
    for _ in 1..config.n_samples {
        masks.push((0..s_count).map(|_| rng.gen_bool(0.5)).collect());
    }

    // Query the oracle in batches; the first reply fixes the class count.
    let mut targets: Vec<F> = Vec::with_capacity(config.n_samples);
    let mut k: Option<usize> = None;
    for (call, chunk) in masks.chunks(batch_limit).enumerate() {
        let batch: Vec<Image<F>> = chunk
            .iter()
            .map(|mask| perturbed_image(image, seg, mask, &fill))
            .collect();
        let out = predict_checked(oracle, &batch, call, k)?;
        if k.is_none() {
            if explained_class >= out.k() {
                return Err(Error::InvalidParameter {
                    name: "explained_class",
                    detail: format!(
                        "class {explained_class} out of range for {} oracle classes",
                        out.k()
                    ),
                });
            }
            k = Some(out.k());
        }
        for i in 0..out.n() {
            targets.push(out.row(i)[explained_class]);
        }
    }

    let mut features: Vec<F> = Vec::with_capacity(config.n_samples * s_count);
    let mut weights: Vec<F> = Vec::with_capacity(config.n_samples);
    for mask in &masks {
        let active = mask.iter().filter(|&&b| b).count();
        let frac = real_usize::<F>(active) / real_usize::<F>(s_count);
        let d = F::one() - frac.sqrt();
        let kw = config.kernel_width;
        weights.push((-(d * d) / (kw * kw)).exp());
        features.extend(mask.iter().map(|&b| if b { F::one() } else { F::zero() }));
    }

    let fit = ridge::weighted_ridge(
        &features,
        &targets,
        &weights,
        config.n_samples,
        s_count,
        config.ridge_lambda,
    )?;
    Ok(LimeExplanation {
        weights: fit.coefficients,
        intercept: fit.intercept,
        fidelity_r2: fit.r2,
        n_samples: config.n_samples,
        seed: config.seed,
        explained_class,
    })
}

/// Summarizes weight stability over already-computed explanation runs
/// (same image, segmentation, and class; different seeds): per-superpixel
/// mean, sample standard deviation, and 95% normal confidence intervals.
pub fn stability_from_explanations<F: Real>(
    runs: &[LimeExplanation<F>],
) -> Result<LimeStability<F>> {
    if runs.len() < 2 {
        return Err(Error::InvalidParameter {
            name: "runs",
            detail: format!(
                "stability estimation needs at least 2 repeats, got {}",
                runs.len()
            ),
        });
    }
    let explained_class = runs[0].explained_class;
    let s_count = runs[0].weights.len();
    for (i, run) in runs.iter().enumerate() {
        if run.weights.len() != s_count {
            return Err(Error::ShapeMismatch {
                detail: format!(
                    "run {i} has {} weights but run 0 has {s_count}",
                    run.weights.len()
                ),
            });
        }
        if run.explained_class != explained_class {
            return Err(Error::InvalidParameter {
                name: "runs",
                detail: format!(
                    "run {i} explains class {} but run 0 explains {explained_class}",
                    run.explained_class
                ),
            });
        }
    }
    let n_repeats = runs.len();
    let low_repeats = n_repeats < LOW_REPEATS_THRESHOLD;
    if low_repeats {
        log::warn!(
            "only {n_repeats} explanation repeats; intervals below {LOW_REPEATS_THRESHOLD} repeats are unreliable"
        );
    }
    let n_f = real_usize::<F>(n_repeats);
    let z = real::<F>(CI_Z);
    let mut mean_weights = vec![F::zero(); s_count];
    let mut std_weights = vec![F::zero(); s_count];
    let mut ci_low = vec![F::zero(); s_count];
    let mut ci_high = vec![F::zero(); s_count];
    for s in 0..s_count {
        let mean: F = runs.iter().map(|r| r.weights[s]).sum::<F>() / n_f;
        let ss: F = runs
            .iter()
            .map(|r| {
                let d = r.weights[s] - mean;
                d * d
            })
            .sum();
        let std = (ss / (n_f - F::one())).sqrt();
        let half = z * std / n_f.sqrt();
        mean_weights[s] = mean;
        std_weights[s] = std;
        ci_low[s] = mean - half;
        ci_high[s] = mean + half;
    }
    let mean_fidelity_r2 = runs.iter().map(|r| r.fidelity_r2).sum::<F>() / n_f;
    Ok(LimeStability {
        mean_weights,
        std_weights,
        ci_low,
        ci_high,
        mean_fidelity_r2,
        n_repeats,
        low_repeats,
        explained_class,
    })
}

/// Runs one explanation per seed and summarizes weight stability.
pub fn lime_repeat_with_seeds<F: Real>(
    oracle: &dyn Oracle<F>,
    image: &Image<F>,
    seg: &SegmentationMap,
    explained_class: usize,
    config: &LimeConfig<F>,
    seeds: &[u64],
) -> Result<LimeStability<F>> {
    if seeds.len() < 2 {
        return Err(Error::InvalidParameter {
            name: "seeds",
            detail: format!(
                "stability estimation needs at least 2 repeats, got {}",
                seeds.len()
            ),
        });
    }
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut run_config = config.clone();
        run_config.seed = seed;
        runs.push(lime_explain(oracle, image, seg, explained_class, &run_config)?);
    }
    stability_from_explanations(&runs)
}

/// Stability run over the consecutive seeds `config.seed .. config.seed + n`.
pub fn lime_repeat<F: Real>(
    oracle: &dyn Oracle<F>,
    image: &Image<F>,
    seg: &SegmentationMap,
    explained_class: usize,
    config: &LimeConfig<F>,
    n_repeats: usize,
) -> Result<LimeStability<F>> {
    let seeds: Vec<u64> = (0..n_repeats as u64)
        .map(|i| config.seed.wrapping_add(i))
        .collect();
    lime_repeat_with_seeds(oracle, image, seg, explained_class, config, &seeds)
}

/// Paints per-superpixel scores onto pixels, producing an unnormalized
/// saliency map.
pub fn weights_to_map<F: Real>(weights: &[F], seg: &SegmentationMap) -> Result<SaliencyMap<F>> {
    if weights.len() != seg.s_count() {
        return Err(Error::ShapeMismatch {
            detail: format!(
                "{} weights for {} superpixels",
                weights.len(),
                seg.s_count()
            ),
        });
    }
    let data: Vec<F> = seg.as_slice().iter().map(|&id| weights[id]).collect();
    SaliencyMap::new(data, seg.h(), seg.w())
}

/// A stack of same-shape, normalized saliency maps (one per explanation
/// draw).
#[derive(Debug, Clone)]
pub struct SaliencyStack<F: Real> {
    maps: Vec<SaliencyMap<F>>,
}

impl<F: Real> SaliencyStack<F> {
    pub fn new(maps: Vec<SaliencyMap<F>>) -> Result<Self> {
        let first = maps.first().ok_or_else(|| Error::Empty {
            what: "saliency stack".into(),
        })?;
        let (h, w) = (first.h(), first.w());
        for (d, map) in maps.iter().enumerate() {
            if !map.is_normalized() {
                return Err(Error::InvalidParameter {
                    name: "maps",
                    detail: format!("saliency map {d} is not normalized to [0, 1]"),
                });
            }
            if map.h() != h || map.w() != w {
                return Err(Error::ShapeMismatch {
                    detail: format!(
                        "saliency map {d} is {}x{} but map 0 is {h}x{w}",
                        map.h(),
                        map.w()
                    ),
                });
            }
        }
        Ok(Self { maps })
    }

    /// Number of maps in the stack.
    pub fn d(&self) -> usize {
        self.maps.len()
    }

    pub fn h(&self) -> usize {
        self.maps[0].h()
    }

    pub fn w(&self) -> usize {
        self.maps[0].w()
    }

    pub fn maps(&self) -> &[SaliencyMap<F>] {
        &self.maps
    }
}

/// Pixelwise mean and spread of a stack of explanation maps.
#[derive(Debug, Clone)]
pub struct ExplanationUncertainty<F: Real> {
    pub mean: SaliencyMap<F>,
    /// Pixelwise sample variance across draws (zero when only one draw).
    pub variance: SaliencyMap<F>,
    /// True when the stack held a single map, so the variance is vacuous.
    pub single_draw: bool,
}

/// Aggregates a stack of normalized maps into a pixelwise mean map and
/// sample-variance map. A single-map stack yields zero variance and sets
/// `single_draw`.
pub fn aggregate_explanations<F: Real>(stack: &SaliencyStack<F>) -> ExplanationUncertainty<F> {
    let (h, w, d) = (stack.h(), stack.w(), stack.d());
    let pixels = h * w;
    let d_f = real_usize::<F>(d);
    let mut mean = vec![F::zero(); pixels];
    for map in stack.maps() {
        for (m, &v) in mean.iter_mut().zip(map.as_slice()) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= d_f;
    }
    let single_draw = d == 1;
    let variance = if single_draw {
        log::warn!("explanation stack holds a single draw; variance map is identically zero");
        vec![F::zero(); pixels]
    } else {
        let mut acc = vec![F::zero(); pixels];
        for map in stack.maps() {
            for (a, (&v, &m)) in acc.iter_mut().zip(map.as_slice().iter().zip(&mean)) {
                let diff = v - m;
                *a += diff * diff;
            }
        }
        let denom = d_f - F::one();
        for a in &mut acc {
            *a /= denom;
        }
        acc
    };
    ExplanationUncertainty {
        mean: SaliencyMap::new(mean, h, w).expect("mean of finite maps is finite"),
        variance: SaliencyMap::new(variance, h, w).expect("variance of finite maps is finite"),
        single_draw,
    }
}

/// Attenuates a normalized saliency map by predictive reliability:
/// `out = (1 - u) * map` where `u` is the normalized uncertainty in
/// `[0, 1]`. Full certainty (`u = 0`) returns the map unchanged; full
/// uncertainty (`u = 1`) suppresses it entirely.
pub fn reliability_weighted_map<F: Real>(
    map: &SaliencyMap<F>,
    normalized_uncertainty: F,
) -> Result<SaliencyMap<F>> {
    if !map.is_normalized() {
        return Err(Error::InvalidParameter {
            name: "map",
            detail: "reliability weighting requires a normalized saliency map".into(),
        });
    }
    let slack = real::<F>(1e-9);
    let u = normalized_uncertainty;
    if !u.is_finite() || u < -slack || u > F::one() + slack {
        return Err(Error::InvalidParameter {
            name: "normalized_uncertainty",
            detail: format!("must lie in [0, 1], got {u}"),
        });
    }
    let keep = F::one() - u.max(F::zero()).min(F::one());
    let data: Vec<F> = map.as_slice().iter().map(|&v| keep * v).collect();
    SaliencyMap::new(data, map.h(), map.w())
}

/// Index of the most influential superpixel (largest absolute weight, ties
/// to the lowest index).
pub fn top_superpixel<F: Real>(weights: &[F]) -> Option<usize> {
    if weights.is_empty() {
        return None;
    }
    let magnitudes: Vec<F> = weights.iter().map(|w| w.abs()).collect();
    Some(argmax(&magnitudes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{ConstantOracle, LinearMaskOracle, PlantedOracle};
    use crate::prob::{ProbabilityMatrix, ProbabilityVector};
    use crate::saliency::normalize_map;
    use std::cell::RefCell;

    fn image(values: &[f64], h: usize, w: usize) -> Image<f64> {
        Image::new(values.to_vec(), h, w).unwrap()
    }

    #[test]
    fn grid_matches_the_documented_small_example() {
        let seg = grid_superpixels(5, 4, 2).unwrap();
        assert_eq!(seg.s_count(), 6);
        // Pixel (row 4, col 3) sits in grid cell (2, 1) -> id 5.
        assert_eq!(seg.as_slice()[4 * 4 + 3], 5);
        // Pixel (row 0, col 0) -> id 0; (row 0, col 2) -> id 1.
        assert_eq!(seg.as_slice()[0], 0);
        assert_eq!(seg.as_slice()[2], 1);
        // Bottom row cells are 1 pixel tall.
        assert_eq!(seg.members(4).len(), 2);
        assert_eq!(seg.members(0).len(), 4);
    }

    #[test]
    fn grid_rejects_zero_cell_and_degrades_on_oversized_cell() {
        assert!(grid_superpixels(5, 4, 0).is_err());
        let seg = grid_superpixels(5, 4, 7).unwrap();
        assert_eq!(seg.s_count(), 1);
        assert!(seg.as_slice().iter().all(|&id| id == 0));
    }

    #[test]
    fn segmentation_requires_contiguous_ids() {
        // Ids {0, 2} skip 1.
        let err = SegmentationMap::new(vec![0, 0, 2, 2], 2, 2).unwrap_err();
        assert!(matches!(err, Error::Segmentation { .. }));
        assert!(SegmentationMap::new(vec![0, 0, 1, 1], 2, 2).is_ok());
    }

    /// 4x4 image, 2x2 grid cells; superpixel 0 carries a textured bright
    /// patch so that mean-filling it changes its pixels.
    fn planted_fixture() -> (Image<f64>, SegmentationMap) {
        let seg = grid_superpixels(4, 4, 2).unwrap();
        let mut data = vec![0.1f64; 16];
        for (idx, &id) in seg.as_slice().iter().enumerate() {
            if id == 0 {
                data[idx] = 0.7 + 0.05 * (idx % 4) as f64;
            }
        }
        (image(&data, 4, 4), seg)
    }

    #[test]
    fn lime_pinpoints_a_planted_superpixel() {
        let (reference, seg) = planted_fixture();
        let oracle =
            PlantedOracle::new(reference.clone(), seg.clone(), 0, 2, 6, 0.9, 0.1).unwrap();
        let config = LimeConfig {
            n_samples: 200,
            ..LimeConfig::new(11)
        };
        let explanation = lime_explain(&oracle, &reference, &seg, 2, &config).unwrap();
        assert_eq!(top_superpixel(&explanation.weights), Some(0));
        assert!(
            explanation.weights[0] > 0.5,
            "planted weight {}",
            explanation.weights[0]
        );
        for s in 1..4 {
            assert!(
                explanation.weights[s].abs() < 0.1,
                "weight {s} = {}",
                explanation.weights[s]
            );
        }
        assert!(explanation.fidelity_r2 > 0.9);
    }

    #[test]
    fn lime_recovers_linear_oracle_coefficients() {
        // Uniform gray reference with zero fill: every masked superpixel is
        // detectably altered, so the oracle sees exactly the LIME mask.
        let reference = image(&[0.5; 36], 6, 6);
        let seg = grid_superpixels(6, 6, 3).unwrap();
        let coefficients = vec![0.4f64, 0.05, 0.3, 0.1];
        let oracle =
            LinearMaskOracle::new(reference.clone(), seg.clone(), coefficients.clone(), 0, 3)
                .unwrap();
        let config = LimeConfig {
            n_samples: 400,
            fill: FillMode::Zero,
            ..LimeConfig::new(5)
        };
        let explanation = lime_explain(&oracle, &reference, &seg, 0, &config).unwrap();
        for (s, &a) in coefficients.iter().enumerate() {
            assert!(
                (explanation.weights[s] - a).abs() < 0.05,
                "weight {s} = {} vs {a}",
                explanation.weights[s]
            );
        }
        assert!(explanation.fidelity_r2 > 0.95);
    }

    #[test]
    fn lime_on_a_constant_oracle_yields_vanishing_weights() {
        let (reference, seg) = planted_fixture();
        let p = ProbabilityVector::new(vec![0.25f64, 0.25, 0.25, 0.25]).unwrap();
        let oracle = ConstantOracle::new(p);
        let config = LimeConfig {
            n_samples: 100,
            ..LimeConfig::new(3)
        };
        let explanation = lime_explain(&oracle, &reference, &seg, 1, &config).unwrap();
        for w in &explanation.weights {
            assert!(w.abs() < 1e-6, "weight {w} should vanish");
        }
        assert!((explanation.fidelity_r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identical_seeds_reproduce_bitwise_identical_explanations() {
        let (reference, seg) = planted_fixture();
        let oracle =
            PlantedOracle::new(reference.clone(), seg.clone(), 0, 2, 6, 0.9, 0.1).unwrap();
        let config = LimeConfig {
            n_samples: 64,
            ..LimeConfig::new(42)
        };
        let a = lime_explain(&oracle, &reference, &seg, 2, &config).unwrap();
        let b = lime_explain(&oracle, &reference, &seg, 2, &config).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.intercept, b.intercept);
        let other = LimeConfig {
            seed: 43,
            ..config.clone()
        };
        let c = lime_explain(&oracle, &reference, &seg, 2, &other).unwrap();
        assert_ne!(a.weights, c.weights);
    }

    #[test]
    fn stability_aggregation_matches_the_repeat_runner() {
        let (reference, seg) = planted_fixture();
        let oracle =
            PlantedOracle::new(reference.clone(), seg.clone(), 0, 2, 6, 0.9, 0.1).unwrap();
        let config = LimeConfig {
            n_samples: 64,
            ..LimeConfig::new(5)
        };
        let seeds = [5u64, 6, 7];
        let runs: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                let run_config = LimeConfig { seed, ..config.clone() };
                lime_explain(&oracle, &reference, &seg, 2, &run_config).unwrap()
            })
            .collect();
        let direct = stability_from_explanations(&runs).unwrap();
        let via_runner =
            lime_repeat_with_seeds(&oracle, &reference, &seg, 2, &config, &seeds).unwrap();
        assert_eq!(direct.mean_weights, via_runner.mean_weights);
        assert_eq!(direct.std_weights, via_runner.std_weights);
        assert_eq!(direct.ci_low, via_runner.ci_low);
        assert_eq!(direct.ci_high, via_runner.ci_high);
        assert_eq!(direct.mean_fidelity_r2, via_runner.mean_fidelity_r2);

        // One run is not enough; mixed classes are rejected.
        assert!(stability_from_explanations(&runs[..1]).is_err());
        let mut mixed = runs.clone();
        mixed[1].explained_class = 3;
        assert!(stability_from_explanations(&mixed).is_err());
    }

    #[test]
    fn lime_requires_more_samples_than_superpixels() {
        let (reference, seg) = planted_fixture();
        let oracle =
            PlantedOracle::new(reference.clone(), seg.clone(), 0, 2, 6, 0.9, 0.1).unwrap();
        let config = LimeConfig {
            n_samples: 4, // 4 superpixels need at least 5 samples
            ..LimeConfig::new(0)
        };
        let err = lime_explain(&oracle, &reference, &seg, 2, &config).unwrap_err();
        match err {
            Error::UnderDetermined { n_samples, s_count } => {
                assert_eq!((n_samples, s_count), (4, 4));
            }
            other => panic!("expected under-determined error, got {other:?}"),
        }
    }

    #[test]
    fn lime_rejects_an_out_of_range_class() {
        let (reference, seg) = planted_fixture();
        let oracle =
            PlantedOracle::new(reference.clone(), seg.clone(), 0, 2, 6, 0.9, 0.1).unwrap();
        let config = LimeConfig {
            n_samples: 32,
            ..LimeConfig::new(0)
        };
        assert!(lime_explain(&oracle, &reference, &seg, 6, &config).is_err());
    }

    /// Wraps an oracle, recording the size of every batch it receives.
    struct CountingOracle<O> {
        inner: O,
        limit: usize,
        batches: RefCell<Vec<usize>>,
    }

    impl<O: Oracle<f64>> Oracle<f64> for CountingOracle<O> {
        fn predict(&self, batch: &[Image<f64>]) -> Result<ProbabilityMatrix<f64>> {
            self.batches.borrow_mut().push(batch.len());
            self.inner.predict(batch)
        }
        fn batch_limit(&self) -> usize {
            self.limit
        }
    }

    #[test]
    fn lime_splits_queries_along_the_oracle_batch_limit() {
        let (reference, seg) = planted_fixture();
        let inner =
            PlantedOracle::new(reference.clone(), seg.clone(), 0, 2, 6, 0.9, 0.1).unwrap();
        let oracle = CountingOracle {
            inner,
            limit: 7,
            batches: RefCell::new(Vec::new()),
        };
        let config = LimeConfig {
            n_samples: 20,
            ..LimeConfig::new(9)
        };
        lime_explain(&oracle, &reference, &seg, 2, &config).unwrap();
        assert_eq!(*oracle.batches.borrow(), vec![7, 7, 6]);
    }

    #[test]
    fn repeats_with_identical_seeds_have_zero_spread() {
        let (reference, seg) = planted_fixture();
        let oracle =
            PlantedOracle::new(reference.clone(), seg.clone(), 0, 2, 6, 0.9, 0.1).unwrap();
        let config = LimeConfig {
            n_samples: 64,
            ..LimeConfig::new(0)
        };
        let stability =
            lime_repeat_with_seeds(&oracle, &reference, &seg, 2, &config, &[17, 17, 17]).unwrap();
        assert!(stability.low_repeats);
        assert_eq!(stability.n_repeats, 3);
        for s in 0..4 {
            // Up to one ulp of play from averaging three identical values.
            assert!(stability.std_weights[s].abs() < 1e-12);
            assert!((stability.ci_low[s] - stability.mean_weights[s]).abs() < 1e-12);
            assert!((stability.ci_high[s] - stability.mean_weights[s]).abs() < 1e-12);
        }
    }

    #[test]
    fn repeat_intervals_bracket_the_mean_and_flag_low_counts() {
        let (reference, seg) = planted_fixture();
        let oracle =
            PlantedOracle::new(reference.clone(), seg.clone(), 0, 2, 6, 0.9, 0.1).unwrap();
        let config = LimeConfig {
            n_samples: 64,
            ..LimeConfig::new(100)
        };
        let five = lime_repeat(&oracle, &reference, &seg, 2, &config, 5).unwrap();
        assert!(!five.low_repeats);
        for s in 0..4 {
            assert!(five.ci_low[s] <= five.mean_weights[s]);
            assert!(five.mean_weights[s] <= five.ci_high[s]);
            assert!(five.std_weights[s] >= 0.0);
        }
        let two = lime_repeat(&oracle, &reference, &seg, 2, &config, 2).unwrap();
        assert!(two.low_repeats);
        assert!(lime_repeat(&oracle, &reference, &seg, 2, &config, 1).is_err());
    }

    #[test]
    fn weights_paint_onto_pixels_by_superpixel() {
        let seg = grid_superpixels(2, 4, 2).unwrap();
        let map = weights_to_map(&[0.5f64, -0.25], &seg).unwrap();
        assert_eq!(map.as_slice(), &[0.5, 0.5, -0.25, -0.25, 0.5, 0.5, -0.25, -0.25]);
        assert!(weights_to_map(&[0.5f64], &seg).is_err());
    }

    fn normalized(values: &[f64], h: usize, w: usize) -> SaliencyMap<f64> {
        normalize_map(&SaliencyMap::new(values.to_vec(), h, w).unwrap())
    }

    #[test]
    fn aggregation_matches_hand_mean_and_sample_variance() {
        let a = normalized(&[0.0, 1.0, 0.5, 0.25], 2, 2);
        let b = normalized(&[1.0, 0.0, 0.5, 0.75], 2, 2);
        let stack = SaliencyStack::new(vec![a, b]).unwrap();
        let agg = aggregate_explanations(&stack);
        assert!(!agg.single_draw);
        assert_eq!(agg.mean.as_slice(), &[0.5, 0.5, 0.5, 0.5]);
        // Sample variance with n-1 = 1: squared half-range * 2.
        assert!((agg.variance.as_slice()[0] - 0.5).abs() < 1e-12);
        assert!((agg.variance.as_slice()[2] - 0.0).abs() < 1e-12);
        assert!((agg.variance.as_slice()[3] - 0.125).abs() < 1e-12);
    }

    #[test]
    fn single_map_aggregation_is_flagged_with_zero_variance() {
        let a = normalized(&[0.0, 0.2, 0.9, 1.0], 2, 2);
        let stack = SaliencyStack::new(vec![a.clone()]).unwrap();
        let agg = aggregate_explanations(&stack);
        assert!(agg.single_draw);
        assert_eq!(agg.mean.as_slice(), a.as_slice());
        assert!(agg.variance.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stacks_require_normalized_same_shape_maps() {
        let raw = SaliencyMap::new(vec![0.0f64, 2.0, 1.0, 0.5], 2, 2).unwrap();
        assert!(SaliencyStack::new(vec![raw]).is_err());
        let a = normalized(&[0.0, 1.0], 1, 2);
        let b = normalized(&[0.0, 1.0], 2, 1);
        assert!(SaliencyStack::new(vec![a, b]).is_err());
        assert!(SaliencyStack::<f64>::new(vec![]).is_err());
    }

    #[test]
    fn reliability_weighting_hits_both_anchors() {
        let map = normalized(&[0.0, 0.4, 1.0, 0.6], 2, 2);
        let certain = reliability_weighted_map(&map, 0.0).unwrap();
        assert_eq!(certain.as_slice(), map.as_slice());
        let uncertain = reliability_weighted_map(&map, 1.0).unwrap();
        assert!(uncertain.as_slice().iter().all(|&v| v == 0.0));
        let half = reliability_weighted_map(&map, 0.5).unwrap();
        assert!((half.as_slice()[2] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn reliability_weighting_rejects_bad_inputs() {
        let map = normalized(&[0.0, 0.4, 1.0, 0.6], 2, 2);
        assert!(reliability_weighted_map(&map, 1.5).is_err());
        assert!(reliability_weighted_map(&map, -0.5).is_err());
        assert!(reliability_weighted_map(&map, f64::NAN).is_err());
        let raw = SaliencyMap::new(vec![0.0f64, 2.0, 1.0, 0.5], 2, 2).unwrap();
        assert!(reliability_weighted_map(&raw, 0.0).is_err());
    }
}
