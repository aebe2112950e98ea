//! Deterministic, atomic file output and content hashing.
//!
//! Every artifact is written through [`atomic_write`]: the bytes land in a
//! sibling temporary file which is then renamed over the target, so a
//! crash never leaves a half-written artifact. All writers construct the
//! full byte string in memory first, which also makes determinism checks
//! (byte-identical reruns) straightforward.

use crate::error::{CliError, Result};
use sha2::{Digest, Sha256};
use std::path::Path;

/// Writes `bytes` to `path` via a temp file + rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir).map_err(|e| CliError::writing(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, bytes).map_err(|e| CliError::writing(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::writing(path, e))?;
    Ok(())
}

/// SHA-256 of a byte string, lowercase hex.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// SHA-256 of a file on disk.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::reading(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Serializes a value as pretty JSON with a trailing newline.
pub fn to_json_bytes<T: serde::Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| CliError::computation(format!("JSON serialization failed: {e}")))?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Writes a value as pretty JSON, atomically.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    atomic_write(path, &to_json_bytes(value)?)
}

/// Reads and deserializes a JSON file.
pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| CliError::reading(path, e))?;
    serde_json::from_slice(&bytes)
        .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

/// Formats a float for JSON-adjacent text artifacts (CSV, SVG) with full
/// round-trip precision and a stable textual form.
pub fn fmt_f64(v: f64) -> String {
    // `Display` for f64 is the shortest text that parses back to the same
    // bits, matching how serde_json prints numbers.
    format!("{v}")
}
