#![allow(dead_code)]

use pnpwpe_core::roomsim::{RoomSpec, simulate_preset_scene, synthetic_speech, Noise, Preset, Scene};
use pnpwpe_core::stft::Stft;
use pnpwpe_core::{Complex64, MultichannelSpectrogram, Spectrogram, StftConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_spec(frames: usize, bins: usize, seed: u64) -> Spectrogram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..frames * bins)
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    Spectrogram::from_matrix(frames, bins, data).unwrap()
}

/// Entries are multiples of 1/64 in [-4, 4], so float32 holds them exactly.
pub fn f32_exact_spec(frames: usize, bins: usize, seed: u64) -> Spectrogram {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = || f64::from(rng.random_range(-256i32..=256)) / 64.0;
    let data = (0..frames * bins).map(|_| Complex64::new(v(), v())).collect();
    Spectrogram::from_matrix(frames, bins, data).unwrap()
}

/// Preset scene with synthetic speech; `snr_db = None` is noiseless.
pub fn scene(preset: Preset, seed: u64, seconds: f64, snr_db: Option<f64>) -> Scene {
    let speech = synthetic_speech(seed, seconds, 16000).unwrap();
    let noise = snr_db.map(|_| Noise::White);
    simulate_preset_scene(preset, seed, &speech, noise.as_ref(), snr_db.unwrap_or(0.0)).unwrap()
}

pub fn stft() -> Stft {
    Stft::new(StftConfig::default())
}

pub fn analyze(scene: &Scene) -> MultichannelSpectrogram {
    stft().analyze_multichannel(&scene.observed).unwrap()
}

/// `max |a - b| / max |b|` over all entries.
pub fn rel_max_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

pub fn rel_max_diff_real(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

pub fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Independent check of every preset constraint, recomputed from the raw
/// coordinates.
pub fn preset_oracle_violations(spec: &RoomSpec, preset: Preset) -> Vec<&'static str> {
    let (len, hgt, t60, src_wall, src_mic) = match preset {
        Preset::A => ((8.0, 13.0), (2.8, 3.8), (0.4, 0.8), 0.5, 0.8),
        Preset::B => ((15.0, 20.0), (3.0, 4.0), (0.8, 1.2), 0.8, 1.3),
    };
    let within = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
    let mut out = vec![];
    let [l, w, h] = spec.dimensions;
    if !within(l, len) || !within(w, len) {
        out.push("floor dimensions");
    }
    if !within(h, hgt) {
        out.push("height");
    }
    if !within(spec.t60, t60) {
        out.push("t60");
    }
    let wall = |p: [f64; 3]| [p[0], l - p[0], p[1], w - p[1], p[2], h - p[2]].into_iter().fold(f64::MAX, f64::min);
    if wall(spec.source) < src_wall {
        out.push("source to wall");
    }
    if spec.mics.len() != 4 {
        out.push("microphone count");
    }
    if spec.mics.iter().any(|&m| dist(m, spec.source) < src_mic) {
        out.push("source to microphone");
    }
    if spec.mics.iter().any(|&m| wall(m) < 0.1) {
        out.push("microphone to wall");
    }
    for pair in spec.mics.windows(2) {
        if (dist(pair[0], pair[1]) - 0.04).abs() > 1e-12 {
            out.push("spacing");
        }
    }
    let ends = dist(spec.mics[0], spec.mics[3]);
    if (ends - 0.12).abs() > 1e-12 {
        out.push("not a straight line");
    }
    if spec.mics.iter().any(|m| (m[2] - spec.mics[0][2]).abs() > 1e-12) {
        out.push("not horizontal");
    }
    out
}

