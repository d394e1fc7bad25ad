//! Objective quality metrics: cepstral distance, frequency-weighted segmental
//! SNR and integer-lag alignment.
//!
//! Both metrics frame the signals with a 512-sample Hann window and a hop of
//! 128 and score only frames whose reference energy is within 40 dB of the
//! loudest reference frame.
//!
//! The cepstral distance ignores `c0`, so a global gain on the estimate does
//! not change it (up to the spectral floor). The segmental SNR compares the
//! estimate to the reference sample by sample and is not gain invariant; it
//! is also not symmetric in its arguments.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::signal::TimeSignal;
use crate::stft::hann;

pub const FRAME_LEN: usize = 512;
pub const HOP: usize = 128;
pub const CEPSTRAL_ORDER: usize = 24;
pub const CD_MAX: f64 = 10.0;
pub const NUM_MEL_BANDS: usize = 23;
pub const SNR_MIN_DB: f64 = -10.0;
pub const SNR_MAX_DB: f64 = 35.0;
pub const MAX_LAG: usize = 1024;
const VAD_RANGE_DB: f64 = 40.0;
const FLOOR: f64 = 1e-10;
const WEIGHT_EXPONENT: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub cd: f64,
    pub fwsegsnr: f64,
    pub frames_used: usize,
}

struct Framer {
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl Framer {
    fn new() -> Self {
        Self {
            window: hann(FRAME_LEN),
            fft: FftPlanner::new().plan_fft_forward(FRAME_LEN),
        }
    }

    fn count(len: usize) -> usize {
        if len <= FRAME_LEN {
            1
        } else {
            (len - FRAME_LEN) / HOP + 1
        }
    }

    /// Windowed, zero-padded frame `j` and its energy.
    fn frame(&self, x: &[f64], j: usize) -> (Vec<f64>, f64) {
        let start = j * HOP;
        let frame: Vec<f64> = (0..FRAME_LEN)
            .map(|i| x.get(start + i).copied().unwrap_or(0.0) * self.window[i])
            .collect();
        let e = frame.iter().map(|v| v * v).sum();
        (frame, e)
    }

    fn spectrum(&self, frame: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = frame.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft.process(&mut buf);
        buf.truncate(FRAME_LEN / 2 + 1);
        buf
    }
}

fn check_pair(reference: &TimeSignal, estimate: &TimeSignal) -> Result<()> {
    if reference.len() != estimate.len() {
        return Err(Error::Metric(format!(
            "reference has {} samples, estimate {}",
            reference.len(),
            estimate.len()
        )));
    }
    if reference.sample_rate() != estimate.sample_rate() {
        return Err(Error::Metric("sample rates differ".into()));
    }
    if reference.is_empty() {
        return Err(Error::Metric("signals are empty".into()));
    }
    Ok(())
}

/// Frames with reference energy above the loudest frame minus 40 dB.
fn active_frames(framer: &Framer, reference: &[f64]) -> Result<Vec<usize>> {
    let energies: Vec<f64> = (0..Framer::count(reference.len()))
        .map(|j| framer.frame(reference, j).1)
        .collect();
    let max = energies.iter().copied().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(Error::Metric("reference is silent".into()));
    }
    let threshold = max * 10f64.powf(-VAD_RANGE_DB / 10.0);
    let used: Vec<usize> = (0..energies.len()).filter(|&j| energies[j] > threshold).collect();
    if used.is_empty() {
        return Err(Error::Metric("no frames above the activity threshold".into()));
    }
    Ok(used)
}

/// Real cepstrum coefficients `1..=CEPSTRAL_ORDER` of `log(|X|^2 + floor)`.
fn cepstrum(log_power: &[f64]) -> Vec<f64> {
    let n = FRAME_LEN as f64;
    let half = FRAME_LEN / 2;
    (1..=CEPSTRAL_ORDER)
        .map(|i| {
            // Even symmetric spectrum: the inverse DFT reduces to a cosine sum.
            let mut acc = log_power[0] + log_power[half] * if i % 2 == 0 { 1.0 } else { -1.0 };
            for (k, lp) in log_power.iter().enumerate().take(half).skip(1) {
                acc += 2.0 * lp * (2.0 * std::f64::consts::PI * (k * i) as f64 / n).cos();
            }
            acc / n
        })
        .collect()
}

fn log_power(spec: &[Complex64]) -> Vec<f64> {
    spec.iter().map(|c| (c.norm_sqr() + FLOOR).ln()).collect()
}

fn cd_frames(framer: &Framer, reference: &[f64], estimate: &[f64], used: &[usize]) -> Vec<f64> {
    let scale = 10.0 / std::f64::consts::LN_10;
    used.iter()
        .map(|&j| {
            let cr = cepstrum(&log_power(&framer.spectrum(&framer.frame(reference, j).0)));
            let ce = cepstrum(&log_power(&framer.spectrum(&framer.frame(estimate, j).0)));
            let ss: f64 = cr.iter().zip(&ce).map(|(a, b)| (a - b) * (a - b)).sum();
            (scale * (2.0 * ss).sqrt()).clamp(0.0, CD_MAX)
        })
        .collect()
}

pub fn cepstral_distance(reference: &TimeSignal, estimate: &TimeSignal) -> Result<f64> {
    check_pair(reference, estimate)?;
    let framer = Framer::new();
    let used = active_frames(&framer, reference.samples())?;
    let d = cd_frames(&framer, reference.samples(), estimate.samples(), &used);
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filters over `0..min(8 kHz, fs/2)`, one row of bin weights
/// per band.
pub fn mel_filterbank(sample_rate: u32) -> Vec<Vec<f64>> {
    let bins = FRAME_LEN / 2 + 1;
    let top = 8000f64.min(f64::from(sample_rate) / 2.0);
    let mel_top = hz_to_mel(top);
    let edges: Vec<f64> = (0..NUM_MEL_BANDS + 2)
        .map(|i| mel_to_hz(mel_top * i as f64 / (NUM_MEL_BANDS + 1) as f64))
        .collect();
    (0..NUM_MEL_BANDS)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * f64::from(sample_rate) / FRAME_LEN as f64;
                    if f > lo && f <= mid {
                        (f - lo) / (mid - lo)
                    } else if f > mid && f < hi {
                        (hi - f) / (hi - mid)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

fn fwsnr_frames(
    framer: &Framer,
    reference: &[f64],
    estimate: &[f64],
    used: &[usize],
    bank: &[Vec<f64>],
) -> Vec<f64> {
    used.iter()
        .map(|&j| {
            let fr = framer.frame(reference, j).0;
            let fe = framer.frame(estimate, j).0;
            let diff: Vec<f64> = fr.iter().zip(&fe).map(|(a, b)| a - b).collect();
            let sr = framer.spectrum(&fr);
            let sd = framer.spectrum(&diff);
            let (mut num, mut den, mut plain) = (0.0, 0.0, 0.0);
            for tri in bank {
                let er: f64 = tri.iter().zip(&sr).map(|(w, c)| w * c.norm_sqr()).sum();
                let ed: f64 = tri.iter().zip(&sd).map(|(w, c)| w * c.norm_sqr()).sum();
                let snr = if ed == 0.0 {
                    SNR_MAX_DB
                } else {
                    (10.0 * (er / ed.max(FLOOR)).log10()).clamp(SNR_MIN_DB, SNR_MAX_DB)
                };
                // Offsets from the cap keep an all-capped frame exactly at it.
                let w = er.sqrt().powf(WEIGHT_EXPONENT);
                num += w * (snr - SNR_MAX_DB);
                den += w;
                plain += snr - SNR_MAX_DB;
            }
            if den > 0.0 {
                SNR_MAX_DB + num / den
            } else {
                SNR_MAX_DB + plain / bank.len() as f64
            }
        })
        .collect()
}

pub fn fw_seg_snr(reference: &TimeSignal, estimate: &TimeSignal) -> Result<f64> {
    check_pair(reference, estimate)?;
    let framer = Framer::new();
    let used = active_frames(&framer, reference.samples())?;
    let bank = mel_filterbank(reference.sample_rate());
    let s = fwsnr_frames(&framer, reference.samples(), estimate.samples(), &used, &bank);
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    /// Delay of the estimate relative to the reference, in samples.
    pub shift: i64,
    pub reference: TimeSignal,
    pub estimate: TimeSignal,
}

/// Cross-correlation `sum_t r[t] e[t + lag]` for `lag` in `-max_lag..=max_lag`.
pub fn cross_correlation(reference: &[f64], estimate: &[f64], max_lag: usize) -> Vec<f64> {
    let n = (reference.len() + estimate.len()).max(1).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let pad = |x: &[f64]| {
        let mut v: Vec<Complex64> = x.iter().map(|&s| Complex64::new(s, 0.0)).collect();
        v.resize(n, Complex64::default());
        v
    };
    let (mut a, mut b) = (pad(reference), pad(estimate));
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (x, y) in a.iter_mut().zip(&b) {
        *x = x.conj() * y;
    }
    inv.process(&mut a);
    let scale = 1.0 / n as f64;
    (-(max_lag as i64)..=max_lag as i64)
        .map(|lag| {
            let valid = if lag >= 0 {
                (lag as usize) < estimate.len()
            } else {
                ((-lag) as usize) < reference.len()
            };
            if valid {
                a[lag.rem_euclid(n as i64) as usize].re * scale
            } else {
                0.0
            }
        })
        .collect()
}

/// Finds the lag within `MAX_LAG` samples that maximizes the cross-correlation
/// and trims both signals to their overlap.
pub fn align(reference: &TimeSignal, estimate: &TimeSignal) -> Result<Alignment> {
    if reference.sample_rate() != estimate.sample_rate() {
        return Err(Error::Alignment("sample rates differ".into()));
    }
    if reference.energy() == 0.0 || estimate.energy() == 0.0 {
        return Err(Error::Alignment("cannot align a silent signal".into()));
    }
    let corr = cross_correlation(reference.samples(), estimate.samples(), MAX_LAG);
    let (best, peak) = corr
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    if !(peak > 0.0) {
        return Err(Error::Alignment("no positive correlation peak".into()));
    }
    let shift = best as i64 - MAX_LAG as i64;
    let (r0, e0) = if shift >= 0 { (0, shift as usize) } else { ((-shift) as usize, 0) };
    let len = (reference.len() - r0).min(estimate.len() - e0);
    let cut = |s: &TimeSignal, start: usize| TimeSignal::new(s.samples()[start..start + len].to_vec(), s.sample_rate());
    Ok(Alignment {
        shift,
        reference: cut(reference, r0)?,
        estimate: cut(estimate, e0)?,
    })
}

/// Optionally aligns, truncates to the common length, and computes both
/// metrics.
pub fn evaluate(reference: &TimeSignal, estimate: &TimeSignal, do_align: bool) -> Result<MetricReport> {
    let (r, e) = if do_align {
        let a = align(reference, estimate)?;
        (a.reference, a.estimate)
    } else {
        let len = reference.len().min(estimate.len());
        (reference.resized(len), estimate.resized(len))
    };
    check_pair(&r, &e)?;
    let framer = Framer::new();
    let used = active_frames(&framer, r.samples())?;
    let cd = cd_frames(&framer, r.samples(), e.samples(), &used);
    let bank = mel_filterbank(r.sample_rate());
    let fw = fwsnr_frames(&framer, r.samples(), e.samples(), &used, &bank);
    Ok(MetricReport {
        cd: cd.iter().sum::<f64>() / cd.len() as f64,
        fwsegsnr: fw.iter().sum::<f64>() / fw.len() as f64,
        frames_used: used.len(),
    })
}
