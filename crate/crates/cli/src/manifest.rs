//! Sample manifest (CSV) and calibration/evaluation split files.
//!
//! The manifest is a CSV with a declared header: the first column is
//! `sample_id`, the second is `label:K` where `K` is the number of
//! classes, and every further column is an opaque group key (vendor,
//! site, ...) usable for stratified reporting. Row order defines tensor
//! row order: manifest row `i` corresponds to row `i` of every tensor
//! file in the same fixture.
//!
//! Splits are JSON files with two id lists, `calibration` and
//! `evaluation`. The two must be disjoint (leakage guard) and every id
//! must exist in the manifest.

use crate::error::{CliError, Result};
use crate::fsio::{atomic_write, read_json};
use std::collections::{HashMap, HashSet};
use std::path::Path;

/// One manifest row; `groups` aligns with [`Manifest::group_keys`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub sample_id: String,
    pub label: usize,
    pub groups: Vec<String>,
}

/// Parsed manifest: class count, group columns, and rows in file order.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub k: usize,
    pub group_keys: Vec<String>,
    pub rows: Vec<ManifestRow>,
    index: HashMap<String, usize>,
}

impl Manifest {
    pub fn new(k: usize, group_keys: Vec<String>, rows: Vec<ManifestRow>) -> Result<Self> {
        if k < 2 {
            return Err(CliError::validation(format!(
                "manifest declares {k} classes; at least 2 required"
            )));
        }
        let mut index = HashMap::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            if row.label >= k {
                return Err(CliError::validation(format!(
                    "manifest row `{}` has label {} but the header declares {k} classes",
                    row.sample_id, row.label
                )));
            }
            if row.groups.len() != group_keys.len() {
                return Err(CliError::validation(format!(
                    "manifest row `{}` has {} group values for {} group columns",
                    row.sample_id,
                    row.groups.len(),
                    group_keys.len()
                )));
            }
            if index.insert(row.sample_id.clone(), i).is_some() {
                return Err(CliError::validation(format!(
                    "duplicate sample_id `{}` in manifest",
                    row.sample_id
                )));
            }
        }
        Ok(Self { k, group_keys, rows, index })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Row index of a sample id.
    pub fn index_of(&self, sample_id: &str) -> Option<usize> {
        self.index.get(sample_id).copied()
    }

    /// Labels in row order.
    pub fn labels(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.label).collect()
    }

    /// Position of a group column by name.
    pub fn group_column(&self, key: &str) -> Result<usize> {
        self.group_keys.iter().position(|g| g == key).ok_or_else(|| {
            CliError::validation(format!(
                "manifest has no group column `{key}` (available: {})",
                if self.group_keys.is_empty() {
                    "none".to_string()
                } else {
                    self.group_keys.join(", ")
                }
            ))
        })
    }

    /// Reads and validates a manifest CSV.
    pub fn read(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_path(path)
            .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        let headers = reader
            .headers()
            .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?
            .clone();
        let mut cols = headers.iter();
        match cols.next() {
            Some("sample_id") => {}
            other => {
                return Err(CliError::validation(format!(
                    "{}: first column must be `sample_id`, found `{}`",
                    path.display(),
                    other.unwrap_or("")
                )))
            }
        }
        let label_col = cols.next().unwrap_or("");
        let k = label_col
            .strip_prefix("label:")
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| {
                CliError::validation(format!(
                    "{}: second column must be `label:K` declaring the class count, found `{label_col}`",
                    path.display()
                ))
            })?;
        let group_keys: Vec<String> = cols.map(|c| c.to_string()).collect();

        let mut rows = Vec::new();
        for record in reader.records() {
            let record =
                record.map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
            let sample_id = record
                .get(0)
                .ok_or_else(|| {
                    CliError::validation(format!("{}: row missing sample_id", path.display()))
                })?
                .to_string();
            let label_text = record.get(1).unwrap_or("");
            let label: usize = label_text.parse().map_err(|_| {
                CliError::validation(format!(
                    "{}: row `{sample_id}` has non-integer label `{label_text}`",
                    path.display()
                ))
            })?;
            let groups: Vec<String> = (0..group_keys.len())
                .map(|g| record.get(2 + g).unwrap_or("").to_string())
                .collect();
            rows.push(ManifestRow { sample_id, label, groups });
        }
        Self::new(k, group_keys, rows).map_err(|e| match e {
            CliError::Validation(msg) => {
                CliError::Validation(format!("{}: {msg}", path.display()))
            }
            other => other,
        })
    }

    /// Serializes the manifest as CSV bytes.
    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["sample_id".to_string(), format!("label:{}", self.k)];
        header.extend(self.group_keys.iter().cloned());
        writer
            .write_record(&header)
            .map_err(|e| CliError::computation(format!("manifest serialization: {e}")))?;
        for row in &self.rows {
            let mut record = vec![row.sample_id.clone(), row.label.to_string()];
            record.extend(row.groups.iter().cloned());
            writer
                .write_record(&record)
                .map_err(|e| CliError::computation(format!("manifest serialization: {e}")))?;
        }
        writer
            .into_inner()
            .map_err(|e| CliError::computation(format!("manifest serialization: {e}")))
    }

    /// Writes the manifest atomically.
    pub fn write(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_csv_bytes()?)
    }
}

/// Id lists for the two halves of a split.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    pub calibration: Vec<String>,
    pub evaluation: Vec<String>,
}

/// Manifest row indices for each half of a split.
#[derive(Debug, Clone)]
pub struct SplitIndices {
    pub calibration: Vec<usize>,
    pub evaluation: Vec<usize>,
}

impl Split {
    pub fn read(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::fsio::write_json(path, self)
    }

    /// Resolves ids to manifest row indices, enforcing the leakage guard:
    /// the two halves must be disjoint, non-empty, free of duplicates, and
    /// every id must exist in the manifest.
    pub fn resolve(&self, manifest: &Manifest) -> Result<SplitIndices> {
        let resolve_half = |name: &str, ids: &[String]| -> Result<Vec<usize>> {
            if ids.is_empty() {
                return Err(CliError::validation(format!(
                    "split `{name}` list is empty"
                )));
            }
            let mut seen = HashSet::with_capacity(ids.len());
            let mut out = Vec::with_capacity(ids.len());
            for id in ids {
                if !seen.insert(id.as_str()) {
                    return Err(CliError::validation(format!(
                        "split `{name}` lists sample_id `{id}` more than once"
                    )));
                }
                let idx = manifest.index_of(id).ok_or_else(|| {
                    CliError::validation(format!(
                        "split `{name}` references sample_id `{id}` which is not in the manifest"
                    ))
                })?;
                out.push(idx);
            }
            Ok(out)
        };
        let calibration = resolve_half("calibration", &self.calibration)?;
        let evaluation = resolve_half("evaluation", &self.evaluation)?;
        let cal_set: HashSet<&str> = self.calibration.iter().map(|s| s.as_str()).collect();
        for id in &self.evaluation {
            if cal_set.contains(id.as_str()) {
                return Err(CliError::validation(format!(
                    "sample_id `{id}` appears in both calibration and evaluation splits; \
                     refusing to continue (leakage guard)"
                )));
            }
        }
        Ok(SplitIndices { calibration, evaluation })
    }
}

/// Gathers the rows of `data` (row-major, `width` values per row) selected
/// by `indices` into a dense matrix.
pub fn gather_rows(data: &[f64], width: usize, indices: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(indices.len() * width);
    for &i in indices {
        out.extend_from_slice(&data[i * width..(i + 1) * width]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo_manifest() -> Manifest {
        let rows = vec![
            ManifestRow { sample_id: "s0".into(), label: 0, groups: vec!["a".into()] },
            ManifestRow { sample_id: "s1".into(), label: 1, groups: vec!["b".into()] },
            ManifestRow { sample_id: "s2".into(), label: 2, groups: vec!["a".into()] },
        ];
        Manifest::new(3, vec!["vendor".into()], rows).unwrap()
    }

    #[test]
    fn csv_round_trip_preserves_rows_and_class_count() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.csv");
        let m = demo_manifest();
        m.write(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("sample_id,label:3,vendor\n"), "{text}");
        let back = Manifest::read(&path).unwrap();
        assert_eq!(back.k, 3);
        assert_eq!(back.group_keys, vec!["vendor".to_string()]);
        assert_eq!(back.rows, m.rows);
        assert_eq!(back.index_of("s1"), Some(1));
        assert_eq!(back.index_of("nope"), None);
    }

    #[test]
    fn rejects_duplicate_ids_and_out_of_range_labels() {
        let rows = vec![
            ManifestRow { sample_id: "s0".into(), label: 0, groups: vec![] },
            ManifestRow { sample_id: "s0".into(), label: 1, groups: vec![] },
        ];
        let err = Manifest::new(3, vec![], rows).unwrap_err();
        assert_eq!(err.exit_code(), 2);

        let rows = vec![ManifestRow { sample_id: "s0".into(), label: 3, groups: vec![] }];
        let err = Manifest::new(3, vec![], rows).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn rejects_malformed_headers() {
        let dir = tempfile::tempdir().unwrap();
        for header in ["id,label:3", "sample_id,label", "sample_id,label:x"] {
            let path = dir.path().join("bad.csv");
            std::fs::write(&path, format!("{header}\n")).unwrap();
            let err = Manifest::read(&path).unwrap_err();
            assert_eq!(err.exit_code(), 2, "header `{header}` should be rejected");
        }
    }

    #[test]
    fn split_resolves_indices_in_order() {
        let m = demo_manifest();
        let split = Split {
            calibration: vec!["s2".into(), "s0".into()],
            evaluation: vec!["s1".into()],
        };
        let idx = split.resolve(&m).unwrap();
        assert_eq!(idx.calibration, vec![2, 0]);
        assert_eq!(idx.evaluation, vec![1]);
    }

    #[test]
    fn split_leakage_guard_rejects_overlap() {
        let m = demo_manifest();
        let split = Split {
            calibration: vec!["s0".into(), "s1".into()],
            evaluation: vec!["s1".into(), "s2".into()],
        };
        let err = split.resolve(&m).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("leakage"), "{err}");
    }

    #[test]
    fn split_rejects_unknown_ids_duplicates_and_empty_halves() {
        let m = demo_manifest();
        let unknown = Split { calibration: vec!["sX".into()], evaluation: vec!["s1".into()] };
        assert_eq!(unknown.resolve(&m).unwrap_err().exit_code(), 2);
        let dup = Split {
            calibration: vec!["s0".into(), "s0".into()],
            evaluation: vec!["s1".into()],
        };
        assert_eq!(dup.resolve(&m).unwrap_err().exit_code(), 2);
        let empty = Split { calibration: vec![], evaluation: vec!["s1".into()] };
        assert_eq!(empty.resolve(&m).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn gather_rows_selects_in_index_order() {
        let data = vec![0.0, 1.0, 10.0, 11.0, 20.0, 21.0];
        assert_eq!(gather_rows(&data, 2, &[2, 0]), vec![20.0, 21.0, 0.0, 1.0]);
    }
}
