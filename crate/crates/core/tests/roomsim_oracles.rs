mod common;

use std::f64::consts::PI;

use common::{dist, preset_oracle_violations};

use pnpwpe_core::roomsim::*;
use pnpwpe_core::signal::convolve;
use pnpwpe_core::TimeSignal;

fn small_room(t60: f64) -> RoomSpec {
    RoomSpec::new([4.0, 5.0, 3.0], t60, [1.0, 1.5, 1.2], vec![[2.5, 3.0, 1.4], [2.54, 3.0, 1.4]], 16000, 0).unwrap()
}

#[test]
fn first_order_images_match_mirror_enumeration() {
    let spec = small_room(0.5);
    let (s, m, dims) = (spec.source, spec.mics[0], spec.dimensions);
    let mut images = vec![(s, 0)];
    for axis in 0..3 {
        let mut low = s;
        low[axis] = -s[axis];
        let mut high = s;
        high[axis] = 2.0 * dims[axis] - s[axis];
        images.push((low, 1));
        images.push((high, 1));
    }
    assert_eq!(images.len(), 7);
    let r: f64 = 0.6;
    let mut expect = vec![0.0; spec.rir_length];
    for (pos, order) in images {
        let d = dist(pos, m);
        expect[(d / SPEED_OF_SOUND * 16000.0).round() as usize] += r.powi(order) / (4.0 * PI * d);
    }
    let h = image_source_rir_with(&spec, 0, r, Some(1)).unwrap();
    for (i, (a, b)) in h.samples().iter().zip(&expect).enumerate() {
        assert!((a - b).abs() < 1e-15, "tap {i}: {a} vs {b}");
    }
}

#[test]
fn direct_path_is_the_first_tap() {
    for seed in 0..5 {
        let spec = sample_room(Preset::A, seed).unwrap();
        for q in 0..spec.mics.len() {
            let h = image_source_rir_with(&spec, q, 0.8, Some(3)).unwrap();
            let d = dist(spec.source, spec.mics[q]);
            assert_eq!(direct_path_index(&h), Some((d / SPEED_OF_SOUND * 16000.0).round() as usize));
        }
    }
}

#[test]
fn sampled_geometry_meets_every_preset_constraint() {
    for preset in [Preset::A, Preset::B] {
        for seed in 0..200 {
            let spec = sample_room(preset, seed).unwrap();
            assert_eq!(preset_oracle_violations(&spec, preset), Vec::<&str>::new(), "preset {preset} seed {seed}");
            assert!(spec.preset_violations(preset).is_empty());
            assert_eq!(spec.rir_length, (1.25 * spec.t60 * 16000.0).ceil() as usize);
        }
    }
}

#[test]
fn render_scene_contracts() {
    let spec = small_room(0.3);
    let clean = synthetic_speech(3, 1.0, 16000).unwrap();
    let dry = render_scene(&spec, &clean, None, 0.0, 1).unwrap();
    assert_eq!(dry.meta.snr_db, None);
    assert_eq!(dry.meta.noise, "none");

    // Observed channels are the clean signal convolved with the RIRs.
    for (q, h) in dry.rirs.iter().enumerate() {
        let expect = convolve(&clean, h).unwrap().resized(clean.len());
        assert_eq!(dry.observed.channels()[q], expect);
    }
    // The reference keeps 50 ms after the direct path.
    let direct = direct_path_index(&dry.rirs[0]).unwrap();
    let early = TimeSignal::new(dry.rirs[0].samples()[..direct + 801].to_vec(), 16000).unwrap();
    assert_eq!(dry.reference, convolve(&clean, &early).unwrap().resized(clean.len()));
    assert!(dry.reference.energy() <= dry.observed.channels()[0].energy());

    let noisy = render_scene(&spec, &clean, Some(&Noise::White), 0.0, 1).unwrap();
    let noise = noisy.observed.channels()[0].samples().iter().zip(dry.observed.channels()[0].samples()).map(|(a, b)| a - b);
    let noise_power = noise.map(|v| v * v).sum::<f64>() / clean.len() as f64;
    let signal_power = dry.observed.channels()[0].power();
    assert!((noise_power / signal_power - 1.0).abs() < 1e-6);
    assert_eq!(noisy, render_scene(&spec, &clean, Some(&Noise::White), 0.0, 1).unwrap());
    assert_ne!(noisy, render_scene(&spec, &clean, Some(&Noise::White), 0.0, 2).unwrap());
}

#[test]
fn scene_bundle_round_trips_through_disk() {
    let spec = small_room(0.3);
    let clean = synthetic_speech(4, 0.5, 16000).unwrap();
    let mut scene = render_scene(&spec, &clean, Some(&Noise::White), 5.0, 3).unwrap();
    scene.meta.preset = Some(Preset::A);
    let dir = tempfile::tempdir().unwrap();
    write_scene(&scene, dir.path()).unwrap();
    let back = read_scene(dir.path()).unwrap();
    assert_eq!(back.meta, scene.meta);
    // Stored as float32.
    let f32_round = |s: &TimeSignal| s.samples().iter().map(|&v| f64::from(v as f32)).collect::<Vec<_>>();
    assert_eq!(back.observed.channels()[1].samples(), f32_round(&scene.observed.channels()[1]).as_slice());
    assert_eq!(back.reference.samples(), f32_round(&scene.reference).as_slice());
    assert_eq!(back.rirs.len(), 2);
}

#[test]
fn white_noise_statistics() {
    let n = 1_000_000;
    let x = white_noise(n, 42, 16000).unwrap();
    let mean = x.samples().iter().sum::<f64>() / n as f64;
    let var = x.samples().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    assert!(mean.abs() < 5.0 / (n as f64).sqrt(), "{mean}");
    assert!((var - 1.0).abs() < 0.01, "{var}");
}

#[test]
fn generated_rir_decay_matches_requested_t60() {
    let spec = sample_room(Preset::A, 21).unwrap();
    let spec = RoomSpec { t60: 0.6, rir_length: default_rir_length(0.6, 16000), ..spec };
    let measured = measure_t60(&image_source_rir(&spec, 0).unwrap()).unwrap();
    assert!((measured - 0.6).abs() <= 0.2 * 0.6, "{measured}");
}
