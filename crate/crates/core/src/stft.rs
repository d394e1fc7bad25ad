//! Short-time Fourier analysis and weighted overlap-add synthesis.
//!
//! Frames are taken every `hop` samples from the input padded at the tail by
//! one frame, windowed with a periodic Hann window and transformed with a
//! one-sided DFT of length `frame_len`. Synthesis applies the same window again
//! and divides by the summed squared-window envelope, which makes
//! `synthesize(analyze(x))` reproduce `x`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::signal::{MultichannelTimeSignal, TimeSignal};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftConfig {
    frame_len: usize,
    hop: usize,
}

impl StftConfig {
    pub fn new(frame_len: usize, hop: usize) -> Result<Self> {
        if frame_len < 2 || !frame_len.is_power_of_two() {
            return Err(Error::invalid(format!(
                "frame length {frame_len} must be a power of two >= 2"
            )));
        }
        if hop == 0 || !frame_len.is_multiple_of(hop) {
            return Err(Error::invalid(format!(
                "hop {hop} must divide frame length {frame_len}"
            )));
        }
        Ok(Self { frame_len, hop })
    }

    /// 75 % overlap.
    pub fn with_frame_len(frame_len: usize) -> Result<Self> {
        Self::new(frame_len, frame_len / 4)
    }

    /// 32 ms frames (rounded up to a power of two) with 75 % overlap; 512/128
    /// at 16 kHz.
    pub fn for_sample_rate(sample_rate: u32) -> Result<Self> {
        let len = (0.032 * f64::from(sample_rate)).round().max(4.0) as usize;
        Self::with_frame_len(len.next_power_of_two())
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn fft_len(&self) -> usize {
        self.frame_len
    }

    pub fn num_bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    /// Number of frames produced for a signal of `len` samples.
    pub fn num_frames(&self, len: usize) -> usize {
        len / self.hop + 1
    }
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            frame_len: 512,
            hop: 128,
        }
    }
}

/// Periodic Hann window `0.5 (1 - cos(2 pi t / len))`.
pub fn hann(frame_len: usize) -> Vec<f64> {
    (0..frame_len)
        .map(|t| 0.5 * (1.0 - (2.0 * PI * t as f64 / frame_len as f64).cos()))
        .collect()
}

/// Complex time-frequency matrix stored frame-major (`n` outer, `k` inner).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    frames: usize,
    bins: usize,
    data: Vec<Complex64>,
    config: StftConfig,
    sample_rate: u32,
    num_samples: usize,
}

impl Spectrogram {
    /// Builds a spectrogram from raw frame-major values.
    pub fn from_values(
        frames: usize,
        bins: usize,
        data: Vec<Complex64>,
        config: StftConfig,
        sample_rate: u32,
        num_samples: usize,
    ) -> Result<Self> {
        if bins != config.num_bins() {
            return Err(Error::invalid(format!(
                "{bins} bins do not match a {}-point transform",
                config.fft_len()
            )));
        }
        Self::with_shape(frames, bins, data, config, sample_rate, num_samples)
    }

    /// Like [`Spectrogram::from_values`] but without tying the bin count to the
    /// transform length, for spectrograms built directly in the STFT domain.
    pub fn with_shape(
        frames: usize,
        bins: usize,
        data: Vec<Complex64>,
        config: StftConfig,
        sample_rate: u32,
        num_samples: usize,
    ) -> Result<Self> {
        if data.len() != frames * bins {
            return Err(Error::invalid(format!(
                "expected {} values for a {frames}x{bins} spectrogram, got {}",
                frames * bins,
                data.len()
            )));
        }
        if data.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::invalid("spectrogram contains non-finite values"));
        }
        Ok(Self {
            frames,
            bins,
            data,
            config,
            sample_rate,
            num_samples,
        })
    }

    /// A generic `frames x bins` matrix with a nominal configuration; used
    /// for synthetic STFT-domain data.
    pub fn from_matrix(frames: usize, bins: usize, data: Vec<Complex64>) -> Result<Self> {
        let fft = (2 * bins.saturating_sub(1)).max(2).next_power_of_two();
        let config = StftConfig::with_frame_len(fft).unwrap_or_default();
        Self::with_shape(frames, bins, data, config, 16000, 0)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            data: vec![Complex64::default(); self.data.len()],
            ..self.clone()
        }
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.frames, self.bins)
    }

    pub fn config(&self) -> StftConfig {
        self.config
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Length of the time signal this spectrogram was computed from.
    pub fn num_samples(&self) -> usize {
        self.num_samples
    }

    pub fn values(&self) -> &[Complex64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.data
    }

    #[inline]
    pub fn get(&self, n: usize, k: usize) -> Complex64 {
        self.data[n * self.bins + k]
    }

    #[inline]
    pub fn set(&mut self, n: usize, k: usize, v: Complex64) {
        self.data[n * self.bins + k] = v;
    }

    pub fn frame(&self, n: usize) -> &[Complex64] {
        &self.data[n * self.bins..(n + 1) * self.bins]
    }

    /// All frames of one frequency bin.
    pub fn band(&self, k: usize) -> Vec<Complex64> {
        (0..self.frames).map(|n| self.get(n, k)).collect()
    }

    pub fn same_shape(&self, other: &Spectrogram) -> bool {
        self.shape() == other.shape()
    }

    pub(crate) fn check_shape(&self, other: &Spectrogram, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "{what}: shape {:?} does not match {:?}",
                other.shape(),
                self.shape()
            )))
        }
    }

    /// Same metadata, new values computed entrywise.
    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        self.map(|v| v * alpha)
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.norm()))
    }
}

/// One spectrogram per microphone, all with the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelSpectrogram {
    channels: Vec<Spectrogram>,
}

impl MultichannelSpectrogram {
    pub fn new(channels: Vec<Spectrogram>) -> Result<Self> {
        let first = channels
            .first()
            .ok_or_else(|| Error::invalid("need at least one channel"))?;
        if channels
            .iter()
            .any(|c| c.shape() != first.shape() || c.config() != first.config())
        {
            return Err(Error::invalid("channel spectrograms differ in shape"));
        }
        Ok(Self { channels })
    }

    pub fn channels(&self) -> &[Spectrogram] {
        &self.channels
    }

    pub fn channel(&self, q: usize) -> &Spectrogram {
        &self.channels[q]
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn frames(&self) -> usize {
        self.channels[0].frames()
    }

    pub fn bins(&self) -> usize {
        self.channels[0].bins()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            channels: self.channels.iter().map(|c| c.scaled(alpha)).collect(),
        }
    }
}

/// Reusable forward/inverse transforms for one configuration.
pub struct Stft {
    config: StftConfig,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(config: StftConfig) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            window: hann(config.frame_len()),
            forward: planner.plan_fft_forward(config.fft_len()),
            inverse: planner.plan_fft_inverse(config.fft_len()),
            config,
        }
    }

    pub fn config(&self) -> StftConfig {
        self.config
    }

    pub fn analyze(&self, signal: &TimeSignal) -> Result<Spectrogram> {
        let (flen, hop) = (self.config.frame_len(), self.config.hop());
        let x = signal.samples();
        if x.len() < flen {
            return Err(Error::invalid(format!(
                "signal of {} samples is shorter than one {flen}-sample frame",
                x.len()
            )));
        }
        let frames = self.config.num_frames(x.len());
        let bins = self.config.num_bins();
        let mut data = Vec::with_capacity(frames * bins);
        let mut buf = vec![Complex64::default(); flen];
        for n in 0..frames {
            let start = n * hop;
            for (t, b) in buf.iter_mut().enumerate() {
                let v = x.get(start + t).copied().unwrap_or(0.0);
                *b = Complex64::new(v * self.window[t], 0.0);
            }
            self.forward.process(&mut buf);
            data.extend_from_slice(&buf[..bins]);
        }
        Spectrogram::from_values(frames, bins, data, self.config, signal.sample_rate(), x.len())
    }

    pub fn synthesize(&self, spec: &Spectrogram) -> Result<TimeSignal> {
        if spec.config() != self.config {
            return Err(Error::invalid("spectrogram was made with another STFT configuration"));
        }
        let (flen, hop) = (self.config.frame_len(), self.config.hop());
        let bins = spec.bins();
        let total = if spec.frames() == 0 {
            0
        } else {
            (spec.frames() - 1) * hop + flen
        };
        let mut out = vec![0.0; total.max(spec.num_samples())];
        let mut envelope = vec![0.0; out.len()];
        let mut buf = vec![Complex64::default(); flen];
        let scale = 1.0 / flen as f64;
        for n in 0..spec.frames() {
            let frame = spec.frame(n);
            buf[..bins].copy_from_slice(frame);
            for k in bins..flen {
                buf[k] = frame[flen - k].conj();
            }
            // DC and Nyquist must be real for a real inverse.
            buf[0].im = 0.0;
            if flen % 2 == 0 {
                buf[flen / 2].im = 0.0;
            }
            self.inverse.process(&mut buf);
            let start = n * hop;
            for t in 0..flen {
                let w = self.window[t];
                out[start + t] += buf[t].re * scale * w;
                envelope[start + t] += w * w;
            }
        }
        let floor = 1e-10 * self.window.iter().map(|w| w * w).fold(0.0, f64::max);
        for (o, e) in out.iter_mut().zip(&envelope) {
            *o = if *e > floor { *o / e } else { 0.0 };
        }
        out.truncate(spec.num_samples());
        TimeSignal::new(out, spec.sample_rate())
    }

    pub fn analyze_multichannel(&self, signal: &MultichannelTimeSignal) -> Result<MultichannelSpectrogram> {
        let channels = signal
            .channels()
            .iter()
            .map(|c| self.analyze(c))
            .collect::<Result<Vec<_>>>()?;
        MultichannelSpectrogram::new(channels)
    }
}

pub fn analyze(signal: &TimeSignal, config: StftConfig) -> Result<Spectrogram> {
    Stft::new(config).analyze(signal)
}

pub fn synthesize(spec: &Spectrogram) -> Result<TimeSignal> {
    Stft::new(spec.config()).synthesize(spec)
}
