//! Saliency (importance) maps over image pixels.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// An `H x W` map of per-pixel importance values (row-major).
///
/// The `normalized` flag records whether [`normalize_map`] has been applied;
/// routines that combine maps require it so that maps from different sources
/// share a common `[0, 1]` scale.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap<F: Real> {
    data: Vec<F>,
    h: usize,
    w: usize,
    normalized: bool,
}

impl<F: Real> SaliencyMap<F> {
    /// Validates a row-major `H x W` buffer of finite values.
    pub fn new(data: Vec<F>, h: usize, w: usize) -> Result<Self> {
        if h == 0 || w == 0 {
            return Err(Error::Empty {
                what: format!("saliency map with shape {h}x{w}"),
            });
        }
        if data.len() != h * w {
            return Err(Error::ShapeMismatch {
                detail: format!("buffer length {} does not equal h*w = {}", data.len(), h * w),
            });
        }
        for (idx, v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    what: format!("saliency map entry ({}, {})", idx / w, idx % w),
                });
            }
        }
        Ok(Self {
            data,
            h,
            w,
            normalized: false,
        })
    }

    /// Height in pixels.
    pub fn h(&self) -> usize {
        self.h
    }

    /// Width in pixels.
    pub fn w(&self) -> usize {
        self.w
    }

    /// Whether [`normalize_map`] has been applied.
    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Underlying row-major buffer.
    pub fn as_slice(&self) -> &[F] {
        &self.data
    }

    /// Value at pixel `(row, col)`.
    pub fn at(&self, row: usize, col: usize) -> F {
        self.data[row * self.w + col]
    }

    /// Internal constructor for buffers produced in already-normalized form.
    pub(crate) fn from_normalized(data: Vec<F>, h: usize, w: usize) -> Self {
        debug_assert_eq!(data.len(), h * w);
        Self {
            data,
            h,
            w,
            normalized: true,
        }
    }
}

/// Min-max rescales a map to span `[0, 1]` and sets its normalized flag.
///
/// A constant map has no scale; by convention it normalizes to all zeros.
pub fn normalize_map<F: Real>(map: &SaliencyMap<F>) -> SaliencyMap<F> {
    let min = map.data.iter().copied().fold(map.data[0], F::min);
    let max = map.data.iter().copied().fold(map.data[0], F::max);
    let range = max - min;
    let data = if range == F::zero() {
        vec![F::zero(); map.data.len()]
    } else {
        map.data.iter().map(|&v| (v - min) / range).collect()
    };
    SaliencyMap::from_normalized(data, map.h, map.w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_map_spans_zero_to_one() {
        let map = SaliencyMap::new(vec![2.0f64, 4.0, 6.0, 8.0], 2, 2).unwrap();
        let norm = normalize_map(&map);
        assert!(norm.is_normalized());
        assert_eq!(norm.as_slice(), &[0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]);
    }

    #[test]
    fn constant_map_normalizes_to_zeros() {
        let map = SaliencyMap::new(vec![5.0f64; 6], 2, 3).unwrap();
        let norm = normalize_map(&map);
        assert!(norm.as_slice().iter().all(|&v| v == 0.0));
        assert!(norm.is_normalized());
    }

    #[test]
    fn negative_values_rescale_into_unit_range() {
        let map = SaliencyMap::new(vec![-1.0f64, 0.0, 1.0, 3.0], 2, 2).unwrap();
        let norm = normalize_map(&map);
        assert_eq!(norm.as_slice()[0], 0.0);
        assert_eq!(norm.as_slice()[3], 1.0);
        assert!((norm.as_slice()[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn non_finite_entries_are_rejected() {
        let err = SaliencyMap::new(vec![0.0f64, f64::INFINITY], 1, 2).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        assert!(SaliencyMap::new(vec![0.0f64; 5], 2, 3).is_err());
        assert!(SaliencyMap::new(vec![0.0f64; 0], 0, 3).is_err());
    }

    #[test]
    fn fresh_maps_are_not_marked_normalized() {
        let map = SaliencyMap::new(vec![0.0f64, 1.0], 1, 2).unwrap();
        assert!(!map.is_normalized());
    }
}
