//! Reference implementation of the subprocess oracle protocol, useful for
//! wiring tests: `uqcal-echo-oracle [--k K] <input.npy> <output.npy>`.
//!
//! Reads a `B x H x W` image batch and writes a `B x K` probability matrix.
//! Each row is a deterministic function of its image's mean intensity, so
//! masking image regions visibly moves the probabilities.

use clap::Parser;
use std::path::PathBuf;
use std::process::ExitCode;
use uqcal_cli::npy;

#[derive(Parser)]
#[command(
    name = "uqcal-echo-oracle",
    version,
    about = "Demo subprocess oracle: reads an image batch tensor, writes class probabilities"
)]
struct Cli {
    /// Number of classes in each output row.
    #[arg(long, default_value_t = 6)]
    k: usize,
    /// Input `B x H x W` image tensor.
    input: PathBuf,
    /// Output `B x K` probability tensor.
    output: PathBuf,
}

fn run(cli: &Cli) -> Result<(), String> {
    if cli.k < 2 {
        return Err(format!("--k must be at least 2, got {}", cli.k));
    }
    let tensor = npy::read(&cli.input).map_err(|e| e.to_string())?;
    let [b, h, w] = tensor.shape.as_slice() else {
        return Err(format!(
            "{}: expected a B x H x W image batch, found shape {:?}",
            cli.input.display(),
            tensor.shape
        ));
    };
    let data = tensor.as_f64(&cli.input).map_err(|e| e.to_string())?;

    let mut out = Vec::with_capacity(b * cli.k);
    for img in data.chunks_exact(h * w) {
        let mean = img.iter().sum::<f64>() / (h * w) as f64;
        // Logits tilt toward class 0 as the mean intensity grows; softmax
        // keeps every row a proper distribution.
        let logits: Vec<f64> = (0..cli.k).map(|c| -(c as f64) * mean).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| e / total));
    }
    npy::write_f64(&cli.output, &[*b, cli.k], &out).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("uqcal-echo-oracle: error: {message}");
            ExitCode::FAILURE
        }
    }
}
