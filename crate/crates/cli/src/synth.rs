//! Synthetic fixture generator.
//!
//! The generator replaces a real dataset with a construction whose ground
//! truth is known exactly, so downstream commands can be checked against
//! it:
//!
//! * Base logits `z ~ logit_scale * N(0, 1)` per class; the label is drawn
//!   from `softmax(z)` by inverse CDF, so `z` is perfectly calibrated by
//!   construction. The *observed* logits are `c * z`: recovering the
//!   temperature `c` undoes the planted miscalibration.
//! * Pass stacks are `c * z + pass_noise * N(0, 1)` per pass and entry;
//!   zero noise makes every pass identical, so spread-based uncertainty
//!   must vanish.
//! * One image per class: a dim checkerboard background with one bright
//!   checkerboard superpixel planted at `class mod S`. Both regions are
//!   textured (no superpixel equals its own mean), so mean-fill masking
//!   is always detectable by the planted builtin oracle, which the
//!   generator also emits as a spec.
//!
//! Everything derives from one ChaCha8 stream seeded by `--seed`, so a
//! rerun with the same seed and config is byte-identical.

use crate::config::SynthConfig;
use crate::error::Result;
use crate::manifest::{Manifest, ManifestRow, Split};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use uqcal_core::explain::grid_superpixels;

/// Pixel values of the planted superpixel (alternating by pixel parity).
pub const PLANTED_PIXEL: (f64, f64) = (0.75, 0.95);
/// Pixel values of the background (alternating by pixel parity).
pub const BACKGROUND_PIXEL: (f64, f64) = (0.10, 0.15);

/// Everything the generator produces, in memory.
pub struct SynthData {
    /// Perfectly calibrated logits `z`, `n_total x k` row-major.
    pub base_logits: Vec<f64>,
    /// Miscalibrated observed logits `c * z`.
    pub observed_logits: Vec<f64>,
    /// One label per sample, drawn from `softmax(z)`.
    pub labels: Vec<usize>,
    /// Pass-stack logits, `t x n_total x k` row-major.
    pub passes: Vec<f64>,
    /// Group value per sample.
    pub vendors: Vec<String>,
    /// One image per class, `k x h x w` row-major, values in `[0, 1]`.
    pub images: Vec<f64>,
    /// Grid superpixel ids, `h x w`.
    pub segmentation: Vec<i64>,
    /// Planted superpixel id per class (`class mod s_count`).
    pub planted: Vec<usize>,
    /// Number of grid superpixels.
    pub s_count: usize,
}

impl SynthData {
    pub fn n_total(&self) -> usize {
        self.labels.len()
    }
}

fn softmax_row(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Generates a full fixture for `config` from one seed.
pub fn generate(config: &SynthConfig, seed: u64) -> Result<SynthData> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_total = config.n_calibration + config.n_evaluation;
    let k = config.k;
    let c = config.miscalibration_c;

    let mut base_logits = Vec::with_capacity(n_total * k);
    let mut labels = Vec::with_capacity(n_total);
    let mut vendors = Vec::with_capacity(n_total);
    for _ in 0..n_total {
        let row_start = base_logits.len();
        for _ in 0..k {
            let e: f64 = rng.sample(StandardNormal);
            base_logits.push(config.logit_scale * e);
        }
        let p = softmax_row(&base_logits[row_start..]);
        let u: f64 = rng.gen();
        let mut cum = 0.0;
        let mut label = k - 1;
        for (j, pj) in p.iter().enumerate() {
            cum += pj;
            if u < cum {
                label = j;
                break;
            }
        }
        labels.push(label);
        let v = rng.gen_range(0..config.vendors.len());
        vendors.push(config.vendors[v].clone());
    }
    let observed_logits: Vec<f64> = base_logits.iter().map(|&z| c * z).collect();

    let mut passes = Vec::with_capacity(config.t_passes * n_total * k);
    for _ in 0..config.t_passes {
        for &z in &base_logits {
            let e: f64 = rng.sample(StandardNormal);
            passes.push(c * z + config.pass_noise * e);
        }
    }

    let img = &config.image;
    let seg = grid_superpixels(img.h, img.w, img.cell)?;
    let s_count = seg.s_count();
    let segmentation: Vec<i64> = seg.as_slice().iter().map(|&id| id as i64).collect();
    let planted: Vec<usize> = (0..k).map(|class| class % s_count).collect();
    let mut images = Vec::with_capacity(k * img.h * img.w);
    for class in 0..k {
        let bright = planted[class];
        for (idx, &id) in seg.as_slice().iter().enumerate() {
            let (y, x) = (idx / img.w, idx % img.w);
            let parity = (x + y) % 2 == 1;
            let (base, alt) = if id == bright { PLANTED_PIXEL } else { BACKGROUND_PIXEL };
            images.push(if parity { alt } else { base });
        }
    }

    Ok(SynthData {
        base_logits,
        observed_logits,
        labels,
        passes,
        vendors,
        images,
        segmentation,
        planted,
        s_count,
    })
}

/// Builds the manifest (ids `s000000...`, one `vendor` group column).
pub fn build_manifest(config: &SynthConfig, data: &SynthData) -> Result<Manifest> {
    let rows: Vec<ManifestRow> = (0..data.n_total())
        .map(|i| ManifestRow {
            sample_id: format!("s{i:06}"),
            label: data.labels[i],
            groups: vec![data.vendors[i].clone()],
        })
        .collect();
    Manifest::new(config.k, vec!["vendor".into()], rows)
}

/// First `n_calibration` ids calibrate, the rest evaluate.
pub fn build_split(config: &SynthConfig, manifest: &Manifest) -> Split {
    let ids: Vec<String> = manifest.rows.iter().map(|r| r.sample_id.clone()).collect();
    Split {
        calibration: ids[..config.n_calibration].to_vec(),
        evaluation: ids[config.n_calibration..].to_vec(),
    }
}
