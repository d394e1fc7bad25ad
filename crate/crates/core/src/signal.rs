//! Time-domain signals and basic signal arithmetic.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// A mono sampled signal at nominal full scale ±1.0.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSignal {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl TimeSignal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::invalid(format!("sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean-square value over the whole signal; zero for an empty signal.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Keeps the first `len` samples, zero-extending if the signal is shorter.
    pub fn resized(&self, len: usize) -> Self {
        let mut samples = self.samples.clone();
        samples.resize(len, 0.0);
        Self {
            samples,
            sample_rate: self.sample_rate,
        }
    }

    pub fn add(&self, other: &TimeSignal) -> Result<Self> {
        if self.sample_rate != other.sample_rate || self.len() != other.len() {
            return Err(Error::invalid("signals differ in length or sample rate"));
        }
        let samples = self
            .samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Self {
            samples,
            sample_rate: self.sample_rate,
        })
    }
}

/// Channels captured synchronously by a microphone array.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelTimeSignal {
    channels: Vec<TimeSignal>,
}

impl MultichannelTimeSignal {
    pub fn new(channels: Vec<TimeSignal>) -> Result<Self> {
        let first = channels
            .first()
            .ok_or_else(|| Error::invalid("a multichannel signal needs at least one channel"))?;
        let (len, rate) = (first.len(), first.sample_rate());
        if channels
            .iter()
            .any(|c| c.len() != len || c.sample_rate() != rate)
        {
            return Err(Error::invalid(
                "all channels must share one length and sample rate",
            ));
        }
        Ok(Self { channels })
    }

    pub fn from_mono(signal: TimeSignal) -> Self {
        Self {
            channels: vec![signal],
        }
    }

    pub fn channels(&self) -> &[TimeSignal] {
        &self.channels
    }

    pub fn channel(&self, index: usize) -> Option<&TimeSignal> {
        self.channels.get(index)
    }

    pub fn into_channels(self) -> Vec<TimeSignal> {
        self.channels
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate(&self) -> u32 {
        self.channels[0].sample_rate()
    }
}

// Below this many multiply-adds the direct sum beats the FFT round trip.
const DIRECT_CONVOLUTION_LIMIT: usize = 1 << 16;

/// Full linear convolution; the output has `len(signal) + len(kernel) - 1`
/// samples (empty if either input is empty).
pub fn convolve(signal: &TimeSignal, kernel: &TimeSignal) -> Result<TimeSignal> {
    if signal.sample_rate() != kernel.sample_rate() {
        return Err(Error::invalid(format!(
            "cannot convolve {} Hz signal with {} Hz kernel",
            signal.sample_rate(),
            kernel.sample_rate()
        )));
    }
    let (x, h) = (signal.samples(), kernel.samples());
    let samples = if x.is_empty() || h.is_empty() {
        Vec::new()
    } else if x.len().min(h.len()) <= 32 || x.len() * h.len() <= DIRECT_CONVOLUTION_LIMIT {
        convolve_direct(x, h)
    } else {
        convolve_fft(x, h)
    };
    TimeSignal::new(samples, signal.sample_rate())
}

fn convolve_direct(x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len() + h.len() - 1];
    for (i, &xi) in x.iter().enumerate() {
        if xi == 0.0 {
            continue;
        }
        for (o, &hj) in out[i..].iter_mut().zip(h) {
            *o += xi * hj;
        }
    }
    out
}

fn convolve_fft(x: &[f64], h: &[f64]) -> Vec<f64> {
    let out_len = x.len() + h.len() - 1;
    let n = out_len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);

    let mut a: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    a.resize(n, Complex64::default());
    let mut b: Vec<Complex64> = h.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    b.resize(n, Complex64::default());
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (p, q) in a.iter_mut().zip(&b) {
        *p *= q;
    }
    inv.process(&mut a);
    let scale = 1.0 / n as f64;
    a[..out_len].iter().map(|c| c.re * scale).collect()
}

/// Squared noise gain that places `noise_power` at `snr_db` below `clean_power`.
pub fn snr_gain_squared(clean_power: f64, noise_power: f64, snr_db: f64) -> f64 {
    clean_power / (noise_power * 10f64.powf(snr_db / 10.0))
}

/// Picks a contiguous noise segment of `len` samples starting at a uniformly
/// random offset drawn from `seed`.
pub fn noise_segment(noise: &TimeSignal, len: usize, seed: u64) -> Result<TimeSignal> {
    if noise.len() < len {
        return Err(Error::invalid(format!(
            "noise has {} samples, at least {len} needed",
            noise.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = rng.random_range(0..=noise.len() - len);
    TimeSignal::new(
        noise.samples()[start..start + len].to_vec(),
        noise.sample_rate(),
    )
}

/// Adds a random segment of `noise` to `clean`, scaled so that the global
/// signal-to-noise ratio equals `snr_db`.
pub fn mix_at_snr(clean: &TimeSignal, noise: &TimeSignal, snr_db: f64, seed: u64) -> Result<TimeSignal> {
    if clean.sample_rate() != noise.sample_rate() {
        return Err(Error::invalid("clean and noise sample rates differ"));
    }
    let segment = noise_segment(noise, clean.len(), seed)?;
    let (pc, pn) = (clean.power(), segment.power());
    if pc <= 0.0 {
        return Err(Error::invalid("clean signal has zero power"));
    }
    if pn <= 0.0 {
        return Err(Error::invalid("noise segment has zero power"));
    }
    let gain = snr_gain_squared(pc, pn, snr_db).sqrt();
    clean.add(&segment.scaled(gain))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(v: &[f64]) -> TimeSignal {
        TimeSignal::new(v.to_vec(), 16000).unwrap()
    }

    fn lcg(seed: u64, n: usize) -> Vec<f64> {
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(TimeSignal::new(vec![0.0], 0).is_err());
        assert!(TimeSignal::new(vec![f64::NAN], 16000).is_err());
        assert!(MultichannelTimeSignal::new(vec![]).is_err());
        assert!(MultichannelTimeSignal::new(vec![sig(&[0.0]), sig(&[0.0, 1.0])]).is_err());
    }

    #[test]
    fn convolve_identity_and_shift() {
        let x = sig(&[0.5, -1.0, 2.0]);
        assert_eq!(convolve(&x, &sig(&[1.0])).unwrap(), x);
        let y = convolve(&sig(&[1.0, 0.0, 0.0]), &sig(&[0.0, 0.0, 1.0])).unwrap();
        assert_eq!(y.samples(), &[0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn convolve_matches_double_loop() {
        let x = lcg(1, 64);
        let h = lcg(2, 16);
        let mut expect = vec![0.0; 79];
        for i in 0..64 {
            for j in 0..16 {
                expect[i + j] += x[i] * h[j];
            }
        }
        let y = convolve(&sig(&x), &sig(&h)).unwrap();
        for (a, b) in y.samples().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fft_path_matches_direct_path() {
        let x = lcg(3, 5000);
        let h = lcg(4, 700);
        let fast = convolve_fft(&x, &h);
        let slow = convolve_direct(&x, &h);
        let scale = slow.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() < 1e-10 * scale);
        }
    }

    #[test]
    fn convolve_rejects_rate_mismatch() {
        let k = TimeSignal::new(vec![1.0], 8000).unwrap();
        assert!(matches!(
            convolve(&sig(&[1.0]), &k),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn mix_at_zero_db_matches_powers() {
        let clean = sig(&lcg(5, 4000));
        let noise = sig(&lcg(6, 9000));
        let mixed = mix_at_snr(&clean, &noise, 0.0, 11).unwrap();
        let added: Vec<f64> = mixed
            .samples()
            .iter()
            .zip(clean.samples())
            .map(|(m, c)| m - c)
            .collect();
        let pn = sig(&added).power();
        assert!((pn - clean.power()).abs() / clean.power() < 1e-10);
    }

    #[test]
    fn mix_at_huge_snr_is_clean() {
        let clean = sig(&lcg(7, 1000));
        let noise = sig(&lcg(8, 1000));
        let mixed = mix_at_snr(&clean, &noise, 300.0, 0).unwrap();
        for (m, c) in mixed.samples().iter().zip(clean.samples()) {
            assert!((m - c).abs() <= 1e-10 * c.abs().max(1e-300));
        }
    }

    #[test]
    fn snr_gain_closed_form() {
        assert!((snr_gain_squared(1.0, 4.0, 10.0) - 0.025).abs() < 1e-15);
    }

    #[test]
    fn mix_is_deterministic_and_checks_power() {
        let clean = sig(&lcg(9, 500));
        let noise = sig(&lcg(10, 5000));
        let a = mix_at_snr(&clean, &noise, 5.0, 42).unwrap();
        let b = mix_at_snr(&clean, &noise, 5.0, 42).unwrap();
        assert_eq!(a, b);
        assert!(mix_at_snr(&sig(&[0.0; 10]), &noise, 0.0, 0).is_err());
        assert!(mix_at_snr(&clean, &sig(&[0.0; 600]), 0.0, 0).is_err());
        assert!(mix_at_snr(&clean, &sig(&[1.0; 10]), 0.0, 0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn convolve_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000) {
            let x = lcg(seed, 40);
            let y = lcg(seed + 1, 40);
            let h = sig(&lcg(seed + 2, 9));
            let combo: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let lhs = convolve(&sig(&combo), &h).unwrap();
            let cx = convolve(&sig(&x), &h).unwrap();
            let cy = convolve(&sig(&y), &h).unwrap();
            let scale = lhs.samples().iter().fold(1e-12f64, |m, v| m.max(v.abs()));
            for i in 0..lhs.len() {
                let rhs = a * cx.samples()[i] + b * cy.samples()[i];
                proptest::prop_assert!((lhs.samples()[i] - rhs).abs() <= 1e-10 * scale);
            }
        }
    }
}
