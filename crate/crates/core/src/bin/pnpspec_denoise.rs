//! Reference external denoiser speaking the `PNPSPEC1` file protocol.
//!
//! ```text
//! pnpspec-denoise copy IN OUT
//! pnpspec-denoise soft TAU IN OUT
//! pnpspec-denoise drop-frame IN OUT
//! ```
//!
//! `copy` returns the input unchanged, `soft` applies the built-in soft
//! threshold, and `drop-frame` returns one frame fewer (for exercising shape
//! checks). Errors go to stderr with exit status 1.

use std::process::ExitCode;

use pnpwpe_core::denoise::{Denoiser, SoftThreshold};
use pnpwpe_core::pnpspec;
use pnpwpe_core::{Result, Spectrogram};

fn usage() -> String {
    "usage: pnpspec-denoise copy IN OUT | soft TAU IN OUT | drop-frame IN OUT".to_string()
}

fn run(args: &[String]) -> std::result::Result<(), String> {
    let (mode, rest) = args.split_first().ok_or_else(usage)?;
    let (tau, paths) = match (mode.as_str(), rest) {
        ("soft", [tau, paths @ ..]) => (
            Some(tau.parse::<f64>().map_err(|_| format!("bad TAU {tau:?}"))?),
            paths,
        ),
        ("copy" | "drop-frame", paths) => (None, paths),
        _ => return Err(usage()),
    };
    let [input, output] = paths else {
        return Err(usage());
    };
    let payload = pnpspec::read_file(input).map_err(|e| e.to_string())?;
    let spec = Spectrogram::from_matrix(payload.frames, payload.bins, payload.values)
        .map_err(|e| e.to_string())?;
    let result: Result<Spectrogram> = match (mode.as_str(), tau) {
        ("soft", Some(tau)) => SoftThreshold { tau }.denoise(&spec),
        ("drop-frame", _) if spec.frames() > 1 => Spectrogram::from_matrix(
            spec.frames() - 1,
            spec.bins(),
            spec.values()[..(spec.frames() - 1) * spec.bins()].to_vec(),
        ),
        _ => Ok(spec),
    };
    let out = result.map_err(|e| e.to_string())?;
    pnpspec::write_file(&out, output).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("pnpspec-denoise: {msg}");
            ExitCode::FAILURE
        }
    }
}
