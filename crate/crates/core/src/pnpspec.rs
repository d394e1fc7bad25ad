//! The `PNPSPEC1` binary spectrogram exchange format.
//!
//! ```text
//! offset  size  field
//! 0       8     ASCII "PNPSPEC1"
//! 8       4     u32 LE  frames (N)
//! 12      4     u32 LE  bins (K)
//! 16      4     u32 LE  sample rate
//! 20      4     u32 LE  reserved, 0
//! 24      8*N*K entries, frame-major (n outer, k inner),
//!               each f32 LE real followed by f32 LE imaginary
//! ```

use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::stft::Spectrogram;

pub const MAGIC: &[u8; 8] = b"PNPSPEC1";
pub const HEADER_LEN: usize = 24;

/// Decoded contents of a `PNPSPEC1` file.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrogramPayload {
    pub frames: usize,
    pub bins: usize,
    pub sample_rate: u32,
    pub values: Vec<Complex64>,
}

fn dim(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Protocol(format!("{what} {v} does not fit in u32")))
}

pub fn encode(spec: &Spectrogram) -> Result<Vec<u8>> {
    let (frames, bins) = spec.shape();
    if frames == 0 || bins == 0 {
        return Err(Error::Protocol(format!(
            "refusing to encode an empty {frames}x{bins} spectrogram"
        )));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * frames * bins);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&dim(frames, "frame count")?.to_le_bytes());
    out.extend_from_slice(&dim(bins, "bin count")?.to_le_bytes());
    out.extend_from_slice(&spec.sample_rate().to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for v in spec.values() {
        let (re, im) = (v.re as f32, v.im as f32);
        if !re.is_finite() || !im.is_finite() {
            return Err(Error::Protocol("value overflows float32".into()));
        }
        out.extend_from_slice(&re.to_le_bytes());
        out.extend_from_slice(&im.to_le_bytes());
    }
    Ok(out)
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("four bytes"))
}

fn read_f32(bytes: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(bytes[at..at + 4].try_into().expect("four bytes"))
}

pub fn decode(bytes: &[u8]) -> Result<SpectrogramPayload> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Protocol(format!("{} bytes is too short for a header", bytes.len())));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Protocol("bad magic, expected PNPSPEC1".into()));
    }
    let frames = read_u32(bytes, 8) as usize;
    let bins = read_u32(bytes, 12) as usize;
    let sample_rate = read_u32(bytes, 16);
    if read_u32(bytes, 20) != 0 {
        return Err(Error::Protocol("reserved header field is not zero".into()));
    }
    if frames == 0 || bins == 0 {
        return Err(Error::Protocol(format!("empty {frames}x{bins} spectrogram")));
    }
    let expected = frames
        .checked_mul(bins)
        .and_then(|c| c.checked_mul(8))
        .and_then(|c| c.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::Protocol("dimensions overflow".into()))?;
    if bytes.len() != expected {
        return Err(Error::Protocol(format!(
            "expected {expected} bytes for {frames}x{bins}, got {}",
            bytes.len()
        )));
    }
    let mut values = Vec::with_capacity(frames * bins);
    for i in 0..frames * bins {
        let at = HEADER_LEN + 8 * i;
        let (re, im) = (read_f32(bytes, at), read_f32(bytes, at + 4));
        if !re.is_finite() || !im.is_finite() {
            return Err(Error::Protocol(format!("entry {i} is not finite")));
        }
        values.push(Complex64::new(f64::from(re), f64::from(im)));
    }
    Ok(SpectrogramPayload {
        frames,
        bins,
        sample_rate,
        values,
    })
}

pub fn write_file(spec: &Spectrogram, path: impl AsRef<Path>) -> Result<()> {
    crate::output::write_atomic(path, &encode(spec)?)
}

pub fn read_file(path: impl AsRef<Path>) -> Result<SpectrogramPayload> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::path(path, e))?;
    decode(&bytes)
}

impl SpectrogramPayload {
    /// Rebuilds a spectrogram with the metadata of `like`, which must have the
    /// same shape.
    pub fn into_spectrogram_like(self, like: &Spectrogram) -> Result<Spectrogram> {
        if (self.frames, self.bins) != like.shape() {
            return Err(Error::Protocol(format!(
                "returned shape {}x{} does not match input {}x{}",
                self.frames,
                self.bins,
                like.frames(),
                like.bins()
            )));
        }
        let mut out = like.clone();
        out.values_mut().copy_from_slice(&self.values);
        Ok(out)
    }
}
