//! Provenance block attached to every artifact bundle.
//!
//! Artifacts never embed wall-clock time; reruns with the same inputs,
//! config, and seed must be byte-identical. The block records the tool
//! name and version, the subcommand, the seed (when one was supplied),
//! a SHA-256 of the raw config bytes, and a SHA-256 per input file keyed
//! by the path string as written in the config.

use crate::error::Result;
use crate::fsio::{sha256_file, sha256_hex};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// Tool version baked in at compile time.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Seed supplied on the command line, when the command took one.
    pub seed: Option<u64>,
    /// SHA-256 of the raw config file bytes.
    pub config_sha256: String,
    /// SHA-256 per input file, keyed by the path as given in the config
    /// (sorted, so serialization order is stable).
    pub inputs: BTreeMap<String, String>,
}

impl Provenance {
    pub fn new(command: &str, seed: Option<u64>, config_bytes: &[u8]) -> Self {
        Self {
            tool: "uqcal".into(),
            version: VERSION.into(),
            command: command.into(),
            seed,
            config_sha256: sha256_hex(config_bytes),
            inputs: BTreeMap::new(),
        }
    }

    /// Records an input file digest under the path string from the config.
    pub fn add_input(&mut self, as_written: &Path, resolved: &Path) -> Result<()> {
        let digest = sha256_file(resolved)?;
        self.inputs
            .insert(as_written.to_string_lossy().into_owned(), digest);
        Ok(())
    }
}
