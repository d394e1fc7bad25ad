//! Shoebox room simulation: geometry sampling, image-source impulse
//! responses, scene rendering and scene bundles on disk.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::output::write_atomic;
use crate::signal::{convolve, snr_gain_squared, noise_segment, MultichannelTimeSignal, TimeSignal};
use crate::wav::{read_wav, write_wav, WavEncoding};

pub const SPEED_OF_SOUND: f64 = 343.0;
pub const NUM_MICS: usize = 4;
pub const MIC_SPACING: f64 = 0.04;
/// Early part of the reference: this long after the direct path.
pub const EARLY_WINDOW_SECONDS: f64 = 0.05;
const MIN_MIC_WALL_DISTANCE: f64 = 0.1;
const MAX_SAMPLING_ATTEMPTS: usize = 1000;

pub type Point = [f64; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    A,
    B,
}

/// Parameter ranges of a room preset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PresetRanges {
    pub length: (f64, f64),
    pub width: (f64, f64),
    pub height: (f64, f64),
    pub t60: (f64, f64),
    pub min_source_wall: f64,
    pub min_source_mic: f64,
    /// Default prediction filter order for this room type.
    pub filter_order: usize,
}

impl Preset {
    pub fn ranges(self) -> PresetRanges {
        match self {
            Preset::A => PresetRanges {
                length: (8.0, 13.0),
                width: (8.0, 13.0),
                height: (2.8, 3.8),
                t60: (0.4, 0.8),
                min_source_wall: 0.5,
                min_source_mic: 0.8,
                filter_order: 28,
            },
            Preset::B => PresetRanges {
                length: (15.0, 20.0),
                width: (15.0, 20.0),
                height: (3.0, 4.0),
                t60: (0.8, 1.2),
                min_source_wall: 0.8,
                min_source_mic: 1.3,
                filter_order: 35,
            },
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::A => "A",
            Preset::B => "B",
        })
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Preset::A),
            "B" | "b" => Ok(Preset::B),
            other => Err(Error::invalid(format!("unknown room preset {other:?}, expected A or B"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoomSpec {
    /// Length, width and height in meters.
    pub dimensions: Point,
    pub t60: f64,
    pub source: Point,
    pub mics: Vec<Point>,
    pub sample_rate: u32,
    pub rir_length: usize,
    pub seed: u64,
}

fn distance(a: &Point, b: &Point) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn wall_distance(p: &Point, dims: &Point) -> f64 {
    (0..3).map(|i| p[i].min(dims[i] - p[i])).fold(f64::INFINITY, f64::min)
}

/// `ceil(1.25 t60 fs)`.
pub fn default_rir_length(t60: f64, sample_rate: u32) -> usize {
    (1.25 * t60 * f64::from(sample_rate)).ceil() as usize
}

impl RoomSpec {
    pub fn new(
        dimensions: Point,
        t60: f64,
        source: Point,
        mics: Vec<Point>,
        sample_rate: u32,
        seed: u64,
    ) -> Result<Self> {
        let spec = Self {
            dimensions,
            t60,
            source,
            rir_length: default_rir_length(t60, sample_rate),
            mics,
            sample_rate,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimensions.iter().any(|d| !(*d > 0.0) || !d.is_finite()) {
            return Err(Error::Geometry(format!("room dimensions {:?} must be positive", self.dimensions)));
        }
        if !(self.t60 > 0.0) || !self.t60.is_finite() {
            return Err(Error::Geometry(format!("t60 {} must be positive", self.t60)));
        }
        if self.sample_rate == 0 || self.rir_length == 0 {
            return Err(Error::Geometry("sample rate and RIR length must be positive".into()));
        }
        if self.mics.is_empty() {
            return Err(Error::Geometry("at least one microphone is required".into()));
        }
        let inside = |p: &Point| (0..3).all(|i| p[i] > 0.0 && p[i] < self.dimensions[i]);
        if !inside(&self.source) {
            return Err(Error::Geometry(format!("source {:?} is not inside the room", self.source)));
        }
        for (i, m) in self.mics.iter().enumerate() {
            if !inside(m) {
                return Err(Error::Geometry(format!("microphone {i} at {m:?} is not inside the room")));
            }
            if distance(m, &self.source) == 0.0 {
                return Err(Error::Geometry(format!("microphone {i} coincides with the source")));
            }
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        self.dimensions.iter().product()
    }

    pub fn surface(&self) -> f64 {
        let [l, w, h] = self.dimensions;
        2.0 * (l * w + l * h + w * h)
    }

    /// Uniform wall reflection coefficient `sqrt(1 - a)` with Sabine
    /// absorption `a = 0.161 V / (S t60)`, clamped to [0, 0.999].
    pub fn reflection_coefficient(&self) -> f64 {
        let a = 0.161 * self.volume() / (self.surface() * self.t60);
        (1.0 - a).max(0.0).sqrt().clamp(0.0, 0.999)
    }

    /// Reflection coefficient whose image-source RIR at microphone 0 has a
    /// Schroeder T60 equal to `t60` (within 0.5%), found by bisection.
    ///
    /// Image sources with uniform absorption decay more slowly than the
    /// Sabine estimate predicts, so `reflection_coefficient` alone yields
    /// rooms that are too reverberant.
    pub fn calibrated_reflection(&self) -> Result<f64> {
        self.validate()?;
        let (mut lo, mut hi) = (0.0, 0.999);
        let mut best = self.reflection_coefficient().min(hi);
        let mut r = best;
        for _ in 0..40 {
            let h = image_source_rir_with(self, 0, r, None)?;
            match decay_time(&h) {
                Decay::TooShort => lo = r,
                Decay::TooLong => hi = r,
                Decay::Measured(t) => {
                    best = r;
                    if (t - self.t60).abs() <= 0.005 * self.t60 {
                        return Ok(r);
                    }
                    if t < self.t60 {
                        lo = r;
                    } else {
                        hi = r;
                    }
                }
            }
            r = 0.5 * (lo + hi);
        }
        Ok(best)
    }

    pub fn source_mic_distances(&self) -> Vec<f64> {
        self.mics.iter().map(|m| distance(m, &self.source)).collect()
    }

    /// Every preset constraint this spec violates, as readable messages.
    pub fn preset_violations(&self, preset: Preset) -> Vec<String> {
        let r = preset.ranges();
        let mut out = Vec::new();
        let mut check_range = |name: &str, v: f64, (lo, hi): (f64, f64)| {
            if !(v >= lo && v <= hi) {
                out.push(format!("{name} {v} outside [{lo}, {hi}]"));
            }
        };
        check_range("length", self.dimensions[0], r.length);
        check_range("width", self.dimensions[1], r.width);
        check_range("height", self.dimensions[2], r.height);
        check_range("t60", self.t60, r.t60);
        let sw = wall_distance(&self.source, &self.dimensions);
        if sw < r.min_source_wall {
            out.push(format!("source is {sw} m from a wall, minimum {}", r.min_source_wall));
        }
        let sm = self.source_mic_distances().into_iter().fold(f64::INFINITY, f64::min);
        if sm < r.min_source_mic {
            out.push(format!("source is {sm} m from a microphone, minimum {}", r.min_source_mic));
        }
        if self.mics.len() != NUM_MICS {
            out.push(format!("{} microphones, expected {NUM_MICS}", self.mics.len()));
        }
        for (i, m) in self.mics.iter().enumerate() {
            let d = wall_distance(m, &self.dimensions);
            if d < MIN_MIC_WALL_DISTANCE {
                out.push(format!("microphone {i} is {d} m from a wall"));
            }
        }
        for pair in self.mics.windows(2) {
            let d = distance(&pair[0], &pair[1]);
            if (d - MIC_SPACING).abs() > 1e-9 {
                out.push(format!("adjacent microphone spacing {d} m, expected {MIC_SPACING}"));
            }
        }
        if self.mics.len() >= 3 {
            // Collinear and evenly spaced: m_i = m_0 + i (m_1 - m_0).
            for (i, m) in self.mics.iter().enumerate() {
                for c in 0..3 {
                    let expect = self.mics[0][c] + i as f64 * (self.mics[1][c] - self.mics[0][c]);
                    if (m[c] - expect).abs() > 1e-9 {
                        out.push(format!("microphone {i} is off the array line"));
                        break;
                    }
                }
            }
        }
        out
    }
}

/// Draws a room of the given preset: uniform dimensions and T60, a source at
/// least the preset distances from walls and microphones, and a horizontal
/// 4-microphone line array at random position and orientation.
pub fn sample_room(preset: Preset, seed: u64) -> Result<RoomSpec> {
    sample_room_at(preset, seed, 16000)
}

pub fn sample_room_at(preset: Preset, seed: u64, sample_rate: u32) -> Result<RoomSpec> {
    let r = preset.ranges();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half_span = 0.5 * MIC_SPACING * (NUM_MICS - 1) as f64;
    for _ in 0..MAX_SAMPLING_ATTEMPTS {
        let dims = [
            rng.random_range(r.length.0..=r.length.1),
            rng.random_range(r.width.0..=r.width.1),
            rng.random_range(r.height.0..=r.height.1),
        ];
        let t60 = rng.random_range(r.t60.0..=r.t60.1);
        let m = r.min_source_wall;
        let source = [
            rng.random_range(m..dims[0] - m),
            rng.random_range(m..dims[1] - m),
            rng.random_range(m..dims[2] - m),
        ];
        let margin = MIN_MIC_WALL_DISTANCE + half_span;
        let center = [
            rng.random_range(margin..dims[0] - margin),
            rng.random_range(margin..dims[1] - margin),
            rng.random_range(MIN_MIC_WALL_DISTANCE..dims[2] - MIN_MIC_WALL_DISTANCE),
        ];
        let theta = rng.random_range(0.0..2.0 * PI);
        let (dx, dy) = (theta.cos(), theta.sin());
        let mics: Vec<Point> = (0..NUM_MICS)
            .map(|i| {
                let off = (i as f64 - (NUM_MICS - 1) as f64 / 2.0) * MIC_SPACING;
                [center[0] + off * dx, center[1] + off * dy, center[2]]
            })
            .collect();
        let spec = RoomSpec {
            dimensions: dims,
            t60,
            source,
            mics,
            sample_rate,
            rir_length: default_rir_length(t60, sample_rate),
            seed,
        };
        if spec.validate().is_ok() && spec.preset_violations(preset).is_empty() {
            return Ok(spec);
        }
    }
    Err(Error::Geometry(format!(
        "no valid preset {preset} geometry after {MAX_SAMPLING_ATTEMPTS} attempts (seed {seed})"
    )))
}

/// Image positions along one axis with their reflection counts, limited to
/// those within `reach` of the microphone coordinate.
fn axis_images(src: f64, mic: f64, len: f64, reach: f64, max_order: Option<u32>) -> Vec<(f64, u32)> {
    let n_max = (reach / (2.0 * len)).ceil() as i64 + 1;
    let mut out = Vec::new();
    for n in -n_max..=n_max {
        for u in 0..2i64 {
            let pos = (1 - 2 * u) as f64 * src + 2.0 * n as f64 * len;
            let order = (2 * n - u).unsigned_abs() as u32;
            if max_order.is_some_and(|m| order > m) {
                continue;
            }
            let d = pos - mic;
            if d.abs() <= reach {
                out.push((d * d, order));
            }
        }
    }
    out
}

/// Image-source RIR with the calibrated reflection coefficient of `spec`.
pub fn image_source_rir(spec: &RoomSpec, mic_index: usize) -> Result<TimeSignal> {
    image_source_rir_with(spec, mic_index, spec.calibrated_reflection()?, None)
}

/// Image-source RIR with an explicit reflection coefficient and optional cap
/// on the total reflection order.
///
/// Each image adds `r^order / (4 pi d)` at sample `round(d / c * fs)`; taps
/// at or beyond `rir_length` are dropped.
pub fn image_source_rir_with(
    spec: &RoomSpec,
    mic_index: usize,
    reflection: f64,
    max_order: Option<u32>,
) -> Result<TimeSignal> {
    spec.validate()?;
    if !(0.0..1.0).contains(&reflection) {
        return Err(Error::invalid(format!("reflection coefficient {reflection} must be in [0, 1)")));
    }
    let mic = spec
        .mics
        .get(mic_index)
        .ok_or_else(|| Error::invalid(format!("microphone {mic_index} out of range")))?;
    let fs = f64::from(spec.sample_rate);
    let len = spec.rir_length;
    let reach = (len as f64 + 0.5) / fs * SPEED_OF_SOUND;
    let reach_sq = reach * reach;
    let axes: Vec<Vec<(f64, u32)>> = (0..3)
        .map(|i| axis_images(spec.source[i], mic[i], spec.dimensions[i], reach, max_order))
        .collect();
    let powers: Vec<f64> = {
        let top = axes.iter().map(|a| a.iter().map(|x| x.1).max().unwrap_or(0)).sum::<u32>();
        (0..=top).map(|k| reflection.powi(k as i32)).collect()
    };
    let mut taps = vec![0.0; len];
    for &(dx2, ox) in &axes[0] {
        for &(dy2, oy) in &axes[1] {
            let dxy = dx2 + dy2;
            if dxy > reach_sq {
                continue;
            }
            for &(dz2, oz) in &axes[2] {
                let d2 = dxy + dz2;
                if d2 > reach_sq {
                    continue;
                }
                let order = ox + oy + oz;
                if max_order.is_some_and(|m| order > m) {
                    continue;
                }
                let gain = powers[order as usize];
                if gain == 0.0 {
                    continue;
                }
                let d = d2.sqrt();
                let idx = (d / SPEED_OF_SOUND * fs).round() as usize;
                if idx < len {
                    taps[idx] += gain / (4.0 * PI * d);
                }
            }
        }
    }
    TimeSignal::new(taps, spec.sample_rate)
}

enum Decay {
    /// The decay curve falls through the fit range within two samples.
    TooShort,
    /// The decay curve does not reach -35 dB.
    TooLong,
    Measured(f64),
}

/// Schroeder backward-integration T60 from a linear fit of the energy decay
/// curve between -5 and -35 dB.
pub fn measure_t60(rir: &TimeSignal) -> Result<f64> {
    match decay_time(rir) {
        Decay::Measured(t) => Ok(t),
        Decay::TooShort => Err(Error::invalid("energy decay is too short to fit")),
        Decay::TooLong => Err(Error::invalid("energy decay does not reach -35 dB")),
    }
}

fn decay_time(rir: &TimeSignal) -> Decay {
    let h = rir.samples();
    let mut edc = vec![0.0; h.len()];
    let mut acc = 0.0;
    for i in (0..h.len()).rev() {
        acc += h[i] * h[i];
        edc[i] = acc;
    }
    let total = acc;
    if !(total > 0.0) {
        return Decay::TooShort;
    }
    let db: Vec<f64> = edc.iter().map(|e| 10.0 * (e / total).log10()).collect();
    let start = db.iter().position(|&d| d <= -5.0);
    let end = db.iter().position(|&d| d <= -35.0);
    let (start, end) = match (start, end) {
        (Some(s), Some(e)) if e > s + 1 => (s, e),
        (_, None) => return Decay::TooLong,
        _ => return Decay::TooShort,
    };
    let fs = f64::from(rir.sample_rate());
    let n = (end - start) as f64;
    let (mut st, mut sy, mut stt, mut sty) = (0.0, 0.0, 0.0, 0.0);
    for (i, &y) in db[start..end].iter().enumerate() {
        let t = (start + i) as f64 / fs;
        st += t;
        sy += y;
        stt += t * t;
        sty += t * y;
    }
    let slope = (n * sty - st * sy) / (n * stt - st * st);
    if !(slope < 0.0) {
        return Decay::TooLong;
    }
    Decay::Measured(-60.0 / slope)
}

/// Seeded standard Gaussian samples.
pub fn white_noise(len: usize, seed: u64, sample_rate: u32) -> Result<TimeSignal> {
    if len == 0 {
        return Err(Error::invalid("noise length must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TimeSignal::new((0..len).map(|_| rng.sample(StandardNormal)).collect(), sample_rate)
}

/// Speech-like test signal normalized to RMS 0.05.
///
/// Voiced syllables use a harmonic source with a wandering, jittered pitch
/// and moving formants plus breath noise; some syllables are fricative noise
/// bursts; syllables are separated by pauses.
pub fn synthetic_speech(seed: u64, seconds: f64, sample_rate: u32) -> Result<TimeSignal> {
    let fs = f64::from(sample_rate);
    let len = (seconds * fs).round() as usize;
    if len == 0 {
        return Err(Error::invalid("synthetic speech needs a positive duration"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; len];
    let nyquist = fs / 2.0;
    let mut t0 = (rng.random_range(0.05..0.2) * fs) as usize;
    while t0 < len {
        let dur = (rng.random_range(0.08..0.28) * fs) as usize;
        let end = (t0 + dur).min(len);
        let n = end - t0;
        if rng.random_bool(0.2) {
            // Fricative: first-differenced noise with a smooth envelope.
            let mut prev = 0.0;
            for i in 0..n {
                let w: f64 = rng.sample(StandardNormal);
                let env = (PI * i as f64 / n as f64).sin();
                out[t0 + i] += 0.3 * env * (w - prev);
                prev = w;
            }
        } else {
            voiced_syllable(&mut rng, &mut out[t0..end], fs, nyquist);
        }
        t0 = end + (rng.random_range(0.03..0.15) * fs) as usize;
    }
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
    if rms > 0.0 {
        for v in &mut out {
            *v *= 0.05 / rms;
        }
    }
    TimeSignal::new(out, sample_rate)
}

fn voiced_syllable(rng: &mut ChaCha8Rng, out: &mut [f64], fs: f64, nyquist: f64) {
    const BLOCK: usize = 32;
    let n = out.len();
    let f0_start: f64 = rng.random_range(95.0..220.0);
    let f0_end: f64 = f0_start * rng.random_range(0.75..1.3);
    let formant_ranges = [(250.0, 900.0, 80.0), (800.0, 2400.0, 110.0), (2200.0, 3300.0, 160.0)];
    let formants: Vec<(f64, f64, f64)> = formant_ranges
        .iter()
        .map(|&(lo, hi, bw)| (rng.random_range(lo..hi), rng.random_range(lo..hi), bw))
        .collect();
    let amp = rng.random_range(0.5..1.0);
    let max_h = (4000.0f64.min(nyquist * 0.9) / f0_start.min(f0_end)).floor() as usize;
    // Smoothed random pitch perturbation, about 2% with a 25 ms memory.
    let pole = (-1.0 / (0.025 * fs)).exp();
    let drive = 0.02 * (1.0 - pole * pole).sqrt();
    let mut wobble = 0.0;
    let mut phase = 0.0;
    let mut weights = vec![0.0; max_h];
    for i in 0..n {
        let frac = i as f64 / n as f64;
        if i % BLOCK == 0 {
            let f0 = f0_start + (f0_end - f0_start) * frac;
            for (h, w) in weights.iter_mut().enumerate() {
                let f = (h + 1) as f64 * f0;
                let env: f64 = formants
                    .iter()
                    .map(|&(a, b, bw)| {
                        let fc = a + (b - a) * frac;
                        (-0.5 * ((f - fc) / bw).powi(2)).exp()
                    })
                    .sum();
                *w = (0.05 + env) / (h + 1) as f64;
            }
        }
        let z: f64 = rng.sample(StandardNormal);
        wobble = pole * wobble + drive * z;
        let f0 = (f0_start + (f0_end - f0_start) * frac) * (1.0 + wobble);
        phase += 2.0 * PI * f0 / fs;
        let env = (PI * frac).sin().powf(0.7);
        let mut v = 0.0;
        for (h, w) in weights.iter().enumerate() {
            let hf = (h + 1) as f64;
            if hf * f0 < nyquist {
                v += w * (hf * phase).sin();
            }
        }
        let breath: f64 = rng.sample(StandardNormal);
        out[i] += amp * env * (v + 0.03 * breath);
    }
}

/// Additive noise for `render_scene`.
#[derive(Debug, Clone, PartialEq)]
pub enum Noise {
    /// Independent white Gaussian noise per channel.
    White,
    /// Segments of a recording at per-channel random offsets.
    Recording { name: String, signal: TimeSignal },
}

impl Noise {
    pub fn label(&self) -> &str {
        match self {
            Noise::White => "wgn",
            Noise::Recording { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneMeta {
    pub preset: Option<Preset>,
    pub seed: u64,
    pub t60: f64,
    /// `None` for a noiseless scene.
    pub snr_db: Option<f64>,
    pub noise: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub observed: MultichannelTimeSignal,
    /// Direct path plus early reflections at the reference microphone.
    pub reference: TimeSignal,
    pub clean: TimeSignal,
    pub rirs: Vec<TimeSignal>,
    pub meta: SceneMeta,
}

/// Index of the first nonzero tap.
pub fn direct_path_index(rir: &TimeSignal) -> Option<usize> {
    rir.samples().iter().position(|&v| v != 0.0)
}

fn trimmed(sig: TimeSignal, len: usize) -> TimeSignal {
    sig.resized(len)
}

/// Renders the scene for `spec` with reference microphone 0.
///
/// With noise, one gain places the reference-channel noise `snr_db` below the
/// reverberant reference-channel signal and is applied to every channel.
pub fn render_scene(
    spec: &RoomSpec,
    clean: &TimeSignal,
    noise: Option<&Noise>,
    snr_db: f64,
    noise_seed: u64,
) -> Result<Scene> {
    spec.validate()?;
    if clean.sample_rate() != spec.sample_rate {
        return Err(Error::invalid(format!(
            "clean signal is {} Hz, room is {} Hz",
            clean.sample_rate(),
            spec.sample_rate
        )));
    }
    if clean.is_empty() {
        return Err(Error::invalid("clean signal is empty"));
    }
    let len = clean.len();
    let reflection = spec.calibrated_reflection()?;
    let rirs = (0..spec.mics.len())
        .map(|q| image_source_rir_with(spec, q, reflection, None))
        .collect::<Result<Vec<_>>>()?;
    let mut channels = rirs
        .iter()
        .map(|h| Ok(trimmed(convolve(clean, h)?, len)))
        .collect::<Result<Vec<_>>>()?;

    let direct = direct_path_index(&rirs[0])
        .ok_or_else(|| Error::Geometry("reference impulse response is all zero".into()))?;
    let early_end = (direct + (EARLY_WINDOW_SECONDS * f64::from(spec.sample_rate)).round() as usize + 1)
        .min(rirs[0].len());
    let early = TimeSignal::new(rirs[0].samples()[..early_end].to_vec(), spec.sample_rate)?;
    let reference = trimmed(convolve(clean, &early)?, len);

    if let Some(noise) = noise {
        let segments = (0..channels.len())
            .map(|q| {
                let seed = noise_seed.wrapping_add(q as u64);
                match noise {
                    Noise::White => white_noise(len, seed, spec.sample_rate),
                    Noise::Recording { signal, .. } => {
                        if signal.sample_rate() != spec.sample_rate {
                            return Err(Error::invalid("noise recording sample rate differs from the room"));
                        }
                        noise_segment(signal, len, seed)
                    }
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let (pc, pn) = (channels[0].power(), segments[0].power());
        if !(pc > 0.0) || !(pn > 0.0) {
            return Err(Error::invalid("cannot mix at an SNR with a silent signal or noise"));
        }
        let gain = snr_gain_squared(pc, pn, snr_db).sqrt();
        for (ch, seg) in channels.iter_mut().zip(&segments) {
            *ch = ch.add(&seg.scaled(gain))?;
        }
    }

    Ok(Scene {
        observed: MultichannelTimeSignal::new(channels)?,
        reference,
        clean: clean.clone(),
        rirs,
        meta: SceneMeta {
            preset: None,
            seed: spec.seed,
            t60: spec.t60,
            snr_db: noise.map(|_| snr_db),
            noise: noise.map_or("none", Noise::label).to_string(),
        },
    })
}

/// Samples a preset room and renders `clean` in it.
pub fn simulate_preset_scene(
    preset: Preset,
    seed: u64,
    clean: &TimeSignal,
    noise: Option<&Noise>,
    snr_db: f64,
) -> Result<Scene> {
    let spec = sample_room_at(preset, seed, clean.sample_rate())?;
    let mut scene = render_scene(&spec, clean, noise, snr_db, seed.wrapping_add(0x5eed))?;
    scene.meta.preset = Some(preset);
    Ok(scene)
}

impl SceneMeta {
    /// Flat `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let preset = self.preset.map_or("none".to_string(), |p| p.to_string());
        let _ = writeln!(s, "preset={preset}");
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "t60={}", self.t60);
        match self.snr_db {
            Some(v) => {
                let _ = writeln!(s, "snr_db={v}");
            }
            None => s.push_str("snr_db=none\n"),
        }
        let _ = writeln!(s, "noise={}", self.noise);
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("meta line {line:?} is not key=value")))?;
            map.insert(k.trim(), v.trim());
        }
        let get = |k: &str| map.get(k).copied().ok_or_else(|| Error::Format(format!("meta is missing {k}")));
        let num = |k: &str| -> Result<f64> {
            get(k)?.parse().map_err(|_| Error::Format(format!("meta {k} is not a number")))
        };
        Ok(Self {
            preset: match get("preset")? {
                "none" => None,
                p => Some(p.parse().map_err(|_| Error::Format(format!("meta preset {p:?}")))?),
            },
            seed: get("seed")?
                .parse()
                .map_err(|_| Error::Format("meta seed is not an integer".into()))?,
            t60: num("t60")?,
            snr_db: match get("snr_db")? {
                "none" => None,
                _ => Some(num("snr_db")?),
            },
            noise: get("noise")?.to_string(),
        })
    }
}

/// Writes `observed.wav`, `reference.wav`, `clean.wav`, `rirs.wav` (float32)
/// and `meta` into `dir`, creating it if needed.
pub fn write_scene(scene: &Scene, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::path(dir, e))?;
    let enc = WavEncoding::Float32;
    write_wav(&scene.observed, dir.join("observed.wav"), enc)?;
    write_wav(&MultichannelTimeSignal::from_mono(scene.reference.clone()), dir.join("reference.wav"), enc)?;
    write_wav(&MultichannelTimeSignal::from_mono(scene.clean.clone()), dir.join("clean.wav"), enc)?;
    write_wav(&MultichannelTimeSignal::new(scene.rirs.clone())?, dir.join("rirs.wav"), enc)?;
    write_atomic(dir.join("meta"), scene.meta.to_text().as_bytes())
}

fn mono(path: &Path) -> Result<TimeSignal> {
    let sig = read_wav(path)?;
    if sig.num_channels() != 1 {
        return Err(Error::Format(format!("{} must be mono", path.display())));
    }
    Ok(sig.into_channels().remove(0))
}

pub fn read_scene(dir: impl AsRef<Path>) -> Result<Scene> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta");
    let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::path(&meta_path, e))?;
    Ok(Scene {
        observed: read_wav(dir.join("observed.wav"))?,
        reference: mono(&dir.join("reference.wav"))?,
        clean: mono(&dir.join("clean.wav"))?,
        rirs: read_wav(dir.join("rirs.wav"))?.into_channels(),
        meta: SceneMeta::parse(&text)?,
    })
}
