//! Command-line pipeline around `uqcal-core`: synthetic fixtures,
//! temperature calibration, evaluation reports, conformal prediction sets,
//! selective-prediction policies, and black-box explanations.
//!
//! All commands read a JSON config, write artifacts atomically into an
//! output directory, and are byte-deterministic for a fixed seed: no
//! timestamps, sorted keys, stable float formatting.

pub mod commands;
pub mod config;
pub mod error;
pub mod fsio;
pub mod manifest;
pub mod npy;
pub mod oracle_adapter;
pub mod provenance;
pub mod report;
pub mod source;
pub mod svg;
pub mod synth;
