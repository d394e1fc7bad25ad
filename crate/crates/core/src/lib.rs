//! Multichannel speech dereverberation.
//!
//! The crate contains the weighted prediction error (WPE) baseline, an ADMM
//! solver that augments WPE with a regularization-by-denoising prior and an
//! explicit additive-noise variable (`pnp`), the pluggable denoisers used by
//! that prior, a shoebox room simulator for building test scenes, and the
//! objective metrics used to score the results.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too. Index loops
// mirror the matrix formulas they implement.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod denoise;
pub mod error;
pub mod metrics;
pub mod numerics;
pub mod output;
pub mod pnp;
pub mod pnpspec;
pub mod roomsim;
pub mod signal;
pub mod stft;
pub mod wav;
pub mod wpe;

pub use error::{Error, Result};
pub use num_complex::Complex64;
pub use signal::{MultichannelTimeSignal, TimeSignal};
pub use stft::{MultichannelSpectrogram, Spectrogram, StftConfig};
