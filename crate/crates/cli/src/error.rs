//! CLI error taxonomy and exit-code mapping.
//!
//! Exit codes: 0 = success, 1 = computation error (oracle or solver
//! failures, output write failures), 2 = input/validation error (bad
//! configs, malformed files, contract violations such as overlapping
//! splits).

use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad inputs: unreadable/malformed files, invalid configs, violated
    /// preconditions. Exit code 2.
    #[error("{0}")]
    Validation(String),
    /// Failures while computing or persisting results. Exit code 1.
    #[error("{0}")]
    Computation(String),
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        CliError::Validation(message.into())
    }

    pub fn computation(message: impl Into<String>) -> Self {
        CliError::Computation(message.into())
    }

    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Computation(_) => 1,
        }
    }

    /// Read failures on input files are validation problems (the user
    /// pointed at something unusable).
    pub fn reading(path: &Path, err: std::io::Error) -> Self {
        CliError::Validation(format!("cannot read {}: {err}", path.display()))
    }

    /// Write failures on outputs are computation problems (the pipeline ran
    /// but could not persist).
    pub fn writing(path: &Path, err: std::io::Error) -> Self {
        CliError::Computation(format!("cannot write {}: {err}", path.display()))
    }
}

impl From<uqcal_core::Error> for CliError {
    fn from(err: uqcal_core::Error) -> Self {
        if err.is_validation() {
            CliError::Validation(err.to_string())
        } else {
            CliError::Computation(err.to_string())
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_split_validation_from_computation() {
        assert_eq!(CliError::validation("x").exit_code(), 2);
        assert_eq!(CliError::computation("x").exit_code(), 1);
    }

    #[test]
    fn core_errors_map_by_their_validation_flag() {
        let validation: CliError = uqcal_core::Error::Empty {
            what: "thing".into(),
        }
        .into();
        assert_eq!(validation.exit_code(), 2);
        let computation: CliError = uqcal_core::Error::Oracle {
            call: 0,
            message: "boom".into(),
        }
        .into();
        assert_eq!(computation.exit_code(), 1);
    }
}
