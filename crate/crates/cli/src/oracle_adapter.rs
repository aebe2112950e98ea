//! Turns an on-disk oracle spec into a live [`Oracle`] implementation.
//!
//! Builtin specs load their reference image and segmentation tensors
//! (paths relative to the spec file) and construct the matching in-process
//! oracle. Subprocess specs run an external command per batch through a
//! file-based exchange: the batch is written as an NPY tensor, the command
//! is invoked as `command... <input> <output>`, and the output tensor is
//! read back and validated. Every exchange file stays on disk under a
//! transcript directory so failed calls can be replayed byte-for-byte.

use crate::config::resolve;
use crate::error::{CliError, Result};
use crate::npy;
use std::cell::Cell;
use std::path::{Path, PathBuf};
use uqcal_core::explain::SegmentationMap;
use uqcal_core::oracle::{
    BuiltinParams, ConstantOracle, Image, LinearMaskOracle, Oracle, OracleSpec, PlantedOracle,
};
use uqcal_core::prob::{ProbabilityMatrix, ProbabilityVector};
use uqcal_core::Error as CoreError;

/// Planted-class probability when the spec leaves `hi` unset.
pub const DEFAULT_PLANTED_HI: f64 = 0.9;
/// Planted-class probability when the spec leaves `lo` unset.
pub const DEFAULT_PLANTED_LO: f64 = 0.1;

/// Reads an oracle spec JSON file and validates it structurally.
pub fn read_spec(path: &Path) -> Result<(OracleSpec, PathBuf)> {
    let spec: OracleSpec = crate::fsio::read_json(path)?;
    spec.validate()
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok((spec, dir))
}

/// Loads an `H x W` image from a float tensor file; a 3-d batch tensor
/// needs `index` to pick one image.
pub fn load_image(path: &Path, index: usize) -> Result<Image<f64>> {
    let tensor = npy::read(path)?;
    let data = tensor.as_f64(path)?;
    let (h, w, slice) = match tensor.shape.as_slice() {
        [h, w] => {
            if index != 0 {
                return Err(CliError::validation(format!(
                    "{}: image index {index} requested but the tensor is a single image",
                    path.display()
                )));
            }
            (*h, *w, data)
        }
        [b, h, w] => {
            if index >= *b {
                return Err(CliError::validation(format!(
                    "{}: image index {index} out of range for a batch of {b}",
                    path.display()
                )));
            }
            (*h, *w, &data[index * h * w..(index + 1) * h * w])
        }
        other => {
            return Err(CliError::validation(format!(
                "{}: expected an H x W image or B x H x W batch, found shape {other:?}",
                path.display()
            )))
        }
    };
    Image::new(slice.to_vec(), h, w)
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

/// Loads a segmentation map from an integer tensor file (`H x W`, ids
/// `0..S` with every id present).
pub fn load_segmentation(path: &Path) -> Result<SegmentationMap> {
    let tensor = npy::read(path)?;
    let data = tensor.as_i64(path)?;
    let [h, w] = tensor.shape.as_slice() else {
        return Err(CliError::validation(format!(
            "{}: segmentation must be an H x W tensor, found shape {:?}",
            path.display(),
            tensor.shape
        )));
    };
    let mut ids = Vec::with_capacity(data.len());
    for &v in data {
        if v < 0 {
            return Err(CliError::validation(format!(
                "{}: negative superpixel id {v}",
                path.display()
            )));
        }
        ids.push(v as usize);
    }
    SegmentationMap::new(ids, *h, *w)
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

fn missing(name: &str, field: &str) -> CliError {
    CliError::validation(format!("builtin oracle `{name}` requires params.{field}"))
}

fn build_builtin(
    name: &str,
    params: &BuiltinParams,
    spec_dir: &Path,
) -> Result<Box<dyn Oracle<f64>>> {
    match name {
        "constant" => {
            let probs = params
                .probabilities
                .clone()
                .ok_or_else(|| missing(name, "probabilities"))?;
            let row = ProbabilityVector::new(probs)
                .map_err(|e| CliError::validation(format!("constant oracle: {e}")))?;
            Ok(Box::new(ConstantOracle::new(row)))
        }
        "planted" | "linear" => {
            let reference = params
                .reference
                .as_deref()
                .ok_or_else(|| missing(name, "reference"))?;
            let seg_path = params
                .segmentation
                .as_deref()
                .ok_or_else(|| missing(name, "segmentation"))?;
            let image = load_image(
                &resolve(spec_dir, Path::new(reference)),
                params.reference_index.unwrap_or(0),
            )?;
            let seg = load_segmentation(&resolve(spec_dir, Path::new(seg_path)))?;
            let class_index = params.class_index.ok_or_else(|| missing(name, "class_index"))?;
            let k = params.k.ok_or_else(|| missing(name, "k"))?;
            let oracle: Box<dyn Oracle<f64>> = if name == "planted" {
                let superpixel = params.superpixel.ok_or_else(|| missing(name, "superpixel"))?;
                Box::new(
                    PlantedOracle::new(
                        image,
                        seg,
                        superpixel,
                        class_index,
                        k,
                        params.hi.unwrap_or(DEFAULT_PLANTED_HI),
                        params.lo.unwrap_or(DEFAULT_PLANTED_LO),
                    )
                    .map_err(|e| CliError::validation(format!("planted oracle: {e}")))?,
                )
            } else {
                let coefficients = params
                    .coefficients
                    .clone()
                    .ok_or_else(|| missing(name, "coefficients"))?;
                Box::new(
                    LinearMaskOracle::new(image, seg, coefficients, class_index, k)
                        .map_err(|e| CliError::validation(format!("linear oracle: {e}")))?,
                )
            };
            Ok(oracle)
        }
        other => Err(CliError::validation(format!(
            "unknown builtin oracle `{other}` (expected constant, planted, or linear)"
        ))),
    }
}

/// External oracle speaking the file-based batch protocol.
pub struct SubprocessOracle {
    command: Vec<String>,
    batch_limit: usize,
    reentrant: bool,
    transcript_dir: PathBuf,
    calls: Cell<usize>,
}

impl SubprocessOracle {
    pub fn new(command: Vec<String>, batch_limit: usize, reentrant: bool, transcript_dir: PathBuf) -> Self {
        Self {
            command,
            batch_limit,
            reentrant,
            transcript_dir,
            calls: Cell::new(0),
        }
    }

    fn fail(&self, call: usize, detail: impl std::fmt::Display) -> CoreError {
        CoreError::Oracle {
            call,
            message: format!("{detail}; transcript: {}", self.transcript_dir.display()),
        }
    }
}

impl Oracle<f64> for SubprocessOracle {
    fn predict(&self, batch: &[Image<f64>]) -> uqcal_core::Result<ProbabilityMatrix<f64>> {
        let call = self.calls.get();
        self.calls.set(call + 1);
        let (h, w) = (batch[0].h(), batch[0].w());
        let mut data = Vec::with_capacity(batch.len() * h * w);
        for image in batch {
            data.extend_from_slice(image.as_slice());
        }
        std::fs::create_dir_all(&self.transcript_dir)
            .map_err(|e| self.fail(call, format!("cannot create transcript dir: {e}")))?;
        let input = self.transcript_dir.join(format!("call_{call:05}_input.npy"));
        let output = self.transcript_dir.join(format!("call_{call:05}_output.npy"));
        std::fs::write(&input, npy::encode_f64(&[batch.len(), h, w], &data))
            .map_err(|e| self.fail(call, format!("cannot write {}: {e}", input.display())))?;

        let result = std::process::Command::new(&self.command[0])
            .args(&self.command[1..])
            .arg(&input)
            .arg(&output)
            .output()
            .map_err(|e| self.fail(call, format!("cannot spawn `{}`: {e}", self.command[0])))?;
        if !result.status.success() {
            let stderr = String::from_utf8_lossy(&result.stderr);
            return Err(self.fail(
                call,
                format!(
                    "`{}` exited with {}: {}",
                    self.command[0],
                    result.status,
                    stderr.trim()
                ),
            ));
        }

        let tensor = npy::read(&output).map_err(|e| self.fail(call, e))?;
        let [rows, k] = tensor.shape.as_slice() else {
            return Err(self.fail(
                call,
                format!("output must be a B x K tensor, found shape {:?}", tensor.shape),
            ));
        };
        let values = tensor
            .as_f64(&output)
            .map_err(|e| self.fail(call, e))?
            .to_vec();
        if *rows != batch.len() {
            return Err(self.fail(
                call,
                format!("sent {} images but received {rows} probability rows", batch.len()),
            ));
        }
        ProbabilityMatrix::new(values, *rows, *k).map_err(|e| self.fail(call, e))
    }

    fn batch_limit(&self) -> usize {
        self.batch_limit
    }

    fn reentrant(&self) -> bool {
        self.reentrant
    }
}

/// Wraps any oracle to enforce a spec-level batch limit.
struct LimitedOracle {
    inner: Box<dyn Oracle<f64>>,
    batch_limit: usize,
    reentrant: bool,
}

impl Oracle<f64> for LimitedOracle {
    fn predict(&self, batch: &[Image<f64>]) -> uqcal_core::Result<ProbabilityMatrix<f64>> {
        self.inner.predict(batch)
    }

    fn batch_limit(&self) -> usize {
        self.batch_limit
    }

    fn reentrant(&self) -> bool {
        self.reentrant
    }
}

/// Builds a live oracle from a validated spec. `transcript_dir` receives
/// the exchange files of subprocess oracles.
pub fn build(
    spec: &OracleSpec,
    spec_dir: &Path,
    transcript_dir: &Path,
) -> Result<Box<dyn Oracle<f64>>> {
    match spec {
        OracleSpec::Builtin {
            name,
            params,
            batch_limit,
            reentrant,
        } => {
            let inner = build_builtin(name, params, spec_dir)?;
            Ok(Box::new(LimitedOracle {
                inner,
                batch_limit: *batch_limit,
                reentrant: *reentrant,
            }))
        }
        OracleSpec::Subprocess {
            command,
            batch_limit,
            reentrant,
        } => Ok(Box::new(SubprocessOracle::new(
            command.clone(),
            *batch_limit,
            *reentrant,
            transcript_dir.to_path_buf(),
        ))),
    }
}
