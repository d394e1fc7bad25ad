//! Denoisers usable as the prior of the plug-and-play solver.
//!
//! Every denoiser maps a complex spectrogram to one of the same shape and is
//! deterministic. The built-in ones modify magnitudes and keep the phase;
//! `External` hands the spectrogram to another program through `PNPSPEC1`
//! files so that arbitrary (for instance neural) denoisers can be attached.

use std::fmt;
use std::str::FromStr;
use std::path::PathBuf;
use std::process::Command;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::pnpspec;
use crate::stft::Spectrogram;

pub trait Denoiser {
    fn denoise(&self, spec: &Spectrogram) -> Result<Spectrogram>;
}

#[derive(Debug, Clone, PartialEq)]
pub enum DenoiserSpec {
    Identity,
    /// Shrinks magnitudes by `tau` times the median magnitude.
    SoftThreshold { tau: f64 },
    /// Per-band spectral gain with a quantile noise estimate.
    Wiener { quantile: f64, min_gain: f64 },
    /// Median of magnitudes over a `(2a+1) x (2b+1)` frames-by-bins window.
    Median2d { frame_radius: usize, bin_radius: usize },
    /// `argv[0] argv[1..] <in> <out>`, run in `working_dir` if given.
    External {
        argv: Vec<String>,
        working_dir: Option<PathBuf>,
    },
}

pub const DEFAULT_WIENER_QUANTILE: f64 = 0.5;
pub const DEFAULT_WIENER_MIN_GAIN: f64 = 0.1;

impl DenoiserSpec {
    pub fn wiener() -> Self {
        DenoiserSpec::Wiener {
            quantile: DEFAULT_WIENER_QUANTILE,
            min_gain: DEFAULT_WIENER_MIN_GAIN,
        }
    }

    /// Splits `command` on whitespace into program and leading arguments.
    pub fn external(command: &str, working_dir: Option<PathBuf>) -> Result<Self> {
        let argv: Vec<String> = command.split_whitespace().map(str::to_owned).collect();
        let spec = DenoiserSpec::External { argv, working_dir };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            DenoiserSpec::Identity | DenoiserSpec::Median2d { .. } => Ok(()),
            DenoiserSpec::SoftThreshold { tau } => {
                if tau >= 0.0 && tau.is_finite() {
                    Ok(())
                } else {
                    Err(Error::invalid(format!("soft threshold {tau} must be >= 0")))
                }
            }
            DenoiserSpec::Wiener { quantile, min_gain } => {
                if !(quantile > 0.0 && quantile < 1.0) {
                    return Err(Error::invalid(format!("quantile {quantile} must be in (0, 1)")));
                }
                if !(0.0..=1.0).contains(&min_gain) {
                    return Err(Error::invalid(format!("minimum gain {min_gain} must be in [0, 1]")));
                }
                Ok(())
            }
            DenoiserSpec::External { ref argv, .. } => {
                if argv.is_empty() {
                    Err(Error::invalid("external denoiser command is empty"))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn build(&self) -> Result<Box<dyn Denoiser>> {
        self.validate()?;
        Ok(match self.clone() {
            DenoiserSpec::Identity => Box::new(Identity),
            DenoiserSpec::SoftThreshold { tau } => Box::new(SoftThreshold { tau }),
            DenoiserSpec::Wiener { quantile, min_gain } => Box::new(Wiener { quantile, min_gain }),
            DenoiserSpec::Median2d {
                frame_radius,
                bin_radius,
            } => Box::new(Median2d {
                frame_radius,
                bin_radius,
            }),
            DenoiserSpec::External { argv, working_dir } => Box::new(External { argv, working_dir }),
        })
    }

    /// Short label used in CSV output.
    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for DenoiserSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DenoiserSpec::Identity => write!(f, "identity"),
            DenoiserSpec::SoftThreshold { tau } => write!(f, "soft:{tau}"),
            DenoiserSpec::Wiener { quantile, min_gain } => write!(f, "wiener:{quantile}:{min_gain}"),
            DenoiserSpec::Median2d {
                frame_radius,
                bin_radius,
            } => write!(f, "median:{frame_radius}:{bin_radius}"),
            DenoiserSpec::External { argv, .. } => write!(f, "external:{}", argv.join(" ")),
        }
    }
}

/// Parses the `Display` form. `wiener` alone takes the default parameters;
/// `external:` is followed by a whitespace separated command line.
impl FromStr for DenoiserSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("cannot parse denoiser '{s}'"));
        let num = |v: &str| v.parse::<f64>().map_err(|_| bad());
        let int = |v: &str| v.parse::<usize>().map_err(|_| bad());
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let args: Vec<&str> = if rest.is_empty() { vec![] } else { rest.split(':').collect() };
        let spec = match (kind, args.as_slice()) {
            ("identity", []) => DenoiserSpec::Identity,
            ("soft", [tau]) => DenoiserSpec::SoftThreshold { tau: num(tau)? },
            ("wiener", []) => DenoiserSpec::wiener(),
            ("wiener", [q, g]) => DenoiserSpec::Wiener {
                quantile: num(q)?,
                min_gain: num(g)?,
            },
            ("median", [a, b]) => DenoiserSpec::Median2d {
                frame_radius: int(a)?,
                bin_radius: int(b)?,
            },
            ("external", _) => return DenoiserSpec::external(rest, None),
            _ => return Err(bad()),
        };
        spec.validate()?;
        Ok(spec)
    }
}

pub struct Identity;

impl Denoiser for Identity {
    fn denoise(&self, spec: &Spectrogram) -> Result<Spectrogram> {
        Ok(spec.clone())
    }
}

fn with_magnitude(v: Complex64, mag: f64) -> Complex64 {
    let m = v.norm();
    if m > 0.0 {
        v * (mag / m)
    } else {
        Complex64::new(mag, 0.0)
    }
}

/// Median of a non-empty slice; the mean of the two middle values for even
/// lengths. Reorders the slice.
pub fn median(values: &mut [f64]) -> f64 {
    let n = values.len();
    let mid = n / 2;
    let (_, &mut upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    if n % 2 == 1 {
        upper
    } else {
        let lower = values[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Linear-interpolation quantile (`x[floor(h)] + frac(h) * (x[ceil(h)] - x[floor(h)])`
/// with `h = (n - 1) p` on the sorted values). Reorders the slice.
pub fn quantile(values: &mut [f64], p: f64) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    let h = (values.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(values.len() - 1);
    values[lo] + (h - lo as f64) * (values[hi] - values[lo])
}

pub struct SoftThreshold {
    pub tau: f64,
}

impl Denoiser for SoftThreshold {
    fn denoise(&self, spec: &Spectrogram) -> Result<Spectrogram> {
        if spec.values().is_empty() || self.tau == 0.0 {
            return Ok(spec.clone());
        }
        let mut mags: Vec<f64> = spec.values().iter().map(|v| v.norm()).collect();
        let threshold = self.tau * median(&mut mags);
        Ok(spec.map(|v| {
            let m = v.norm();
            if m == 0.0 {
                v
            } else {
                v * ((m - threshold).max(0.0) / m)
            }
        }))
    }
}

pub struct Wiener {
    pub quantile: f64,
    pub min_gain: f64,
}

impl Wiener {
    pub fn gain(&self, power: f64, noise: f64) -> f64 {
        let ratio = if noise > 0.0 { noise / power.max(noise) } else { 0.0 };
        (1.0 - ratio).max(self.min_gain)
    }
}

impl Denoiser for Wiener {
    fn denoise(&self, spec: &Spectrogram) -> Result<Spectrogram> {
        let mut out = spec.clone();
        if spec.frames() == 0 {
            return Ok(out);
        }
        for k in 0..spec.bins() {
            let mut powers: Vec<f64> = (0..spec.frames()).map(|n| spec.get(n, k).norm_sqr()).collect();
            let noise = quantile(&mut powers, self.quantile);
            for n in 0..spec.frames() {
                let v = spec.get(n, k);
                out.set(n, k, v * self.gain(v.norm_sqr(), noise));
            }
        }
        Ok(out)
    }
}

pub struct Median2d {
    pub frame_radius: usize,
    pub bin_radius: usize,
}

impl Denoiser for Median2d {
    fn denoise(&self, spec: &Spectrogram) -> Result<Spectrogram> {
        let (frames, bins) = spec.shape();
        let mut out = spec.clone();
        if frames == 0 || bins == 0 {
            return Ok(out);
        }
        let mags: Vec<f64> = spec.values().iter().map(|v| v.norm()).collect();
        let (a, b) = (self.frame_radius as isize, self.bin_radius as isize);
        let mut window = Vec::with_capacity(((2 * a + 1) * (2 * b + 1)) as usize);
        for n in 0..frames {
            for k in 0..bins {
                window.clear();
                for dn in -a..=a {
                    let nn = (n as isize + dn).clamp(0, frames as isize - 1) as usize;
                    for dk in -b..=b {
                        let kk = (k as isize + dk).clamp(0, bins as isize - 1) as usize;
                        window.push(mags[nn * bins + kk]);
                    }
                }
                let m = median(&mut window);
                out.set(n, k, with_magnitude(spec.get(n, k), m));
            }
        }
        Ok(out)
    }
}

pub struct External {
    pub argv: Vec<String>,
    pub working_dir: Option<PathBuf>,
}

impl External {
    fn run(&self, dir: &std::path::Path, spec: &Spectrogram) -> Result<Spectrogram> {
        let input = dir.join("in.pnpspec");
        let output = dir.join("out.pnpspec");
        pnpspec::write_file(spec, &input)?;
        let mut cmd = Command::new(&self.argv[0]);
        cmd.args(&self.argv[1..]).arg(&input).arg(&output);
        if let Some(wd) = &self.working_dir {
            cmd.current_dir(wd);
        }
        let result = cmd.output().map_err(|e| Error::Denoiser {
            message: format!("could not start '{}': {e}", self.argv[0]),
            stderr: String::new(),
        })?;
        if !result.status.success() {
            return Err(Error::Denoiser {
                message: format!("'{}' exited with {}", self.argv.join(" "), result.status),
                stderr: String::from_utf8_lossy(&result.stderr).into_owned(),
            });
        }
        pnpspec::read_file(&output)?.into_spectrogram_like(spec)
    }
}

impl Denoiser for External {
    fn denoise(&self, spec: &Spectrogram) -> Result<Spectrogram> {
        let dir = tempfile::Builder::new().prefix("pnpspec-").tempdir()?;
        match self.run(dir.path(), spec) {
            Ok(out) => Ok(out),
            Err(e) => {
                // Keep the exchange files around for inspection.
                let kept = dir.keep();
                Err(e.context(format!("external denoiser files kept in {}", kept.display())))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_spec(frames: usize, bins: usize, seed: u64) -> Spectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..frames * bins)
            .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        Spectrogram::from_matrix(frames, bins, data).unwrap()
    }

    fn assert_close(a: &Spectrogram, b: &Spectrogram, tol: f64) {
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).norm() <= tol * y.norm().max(1.0), "{x} vs {y}");
        }
    }

    #[test]
    fn labels_parse_back() {
        for spec in [
            DenoiserSpec::Identity,
            DenoiserSpec::SoftThreshold { tau: 0.25 },
            DenoiserSpec::Wiener { quantile: 0.3, min_gain: 0.2 },
            DenoiserSpec::Median2d { frame_radius: 1, bin_radius: 2 },
            DenoiserSpec::External { argv: vec!["prog".into(), "-x".into()], working_dir: None },
        ] {
            assert_eq!(spec.label().parse::<DenoiserSpec>().unwrap(), spec);
        }
        assert_eq!("wiener".parse::<DenoiserSpec>().unwrap(), DenoiserSpec::wiener());
        for bad in ["", "soft", "soft:x", "wiener:0.5", "wiener:1.5:0.1", "median:1", "external:", "gauss"] {
            assert!(bad.parse::<DenoiserSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn identity_is_bit_exact() {
        let s = random_spec(5, 4, 1);
        assert_eq!(Identity.denoise(&s).unwrap(), s);
        let z = s.zeros_like();
        assert_eq!(Identity.denoise(&z).unwrap(), z);
    }

    #[test]
    fn soft_threshold_cases() {
        let s = random_spec(6, 5, 2);
        assert_eq!(SoftThreshold { tau: 0.0 }.denoise(&s).unwrap(), s);

        let uniform = Spectrogram::from_matrix(
            2,
            2,
            vec![c(1.0, 0.0), c(0.0, 1.0), c(-0.6, 0.8), c(0.6, -0.8)],
        )
        .unwrap();
        let out = SoftThreshold { tau: 0.5 }.denoise(&uniform).unwrap();
        for (o, i) in out.values().iter().zip(uniform.values()) {
            assert!((o - i * 0.5).norm() < 1e-15);
        }
    }

    #[test]
    fn soft_threshold_matches_scalar_formula() {
        let s = random_spec(7, 9, 3);
        let out = SoftThreshold { tau: 0.3 }.denoise(&s).unwrap();
        let mut mags: Vec<f64> = s.values().iter().map(|v| v.norm()).collect();
        mags.sort_by(f64::total_cmp);
        let med = mags[31]; // 63 entries
        for (o, v) in out.values().iter().zip(s.values()) {
            let m = v.norm();
            let expect = v * ((m - 0.3 * med).max(0.0) / m);
            assert!((o - expect).norm() < 1e-15);
        }
    }

    #[test]
    fn median_and_quantile_helpers() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), 2.5);
        assert_eq!(quantile(&mut [1.0, 2.0, 3.0, 4.0], 0.5), 2.5);
        assert!((quantile(&mut [10.0, 0.0, 20.0], 0.25) - 5.0).abs() < 1e-15);
    }

    #[test]
    fn wiener_constant_band_hits_min_gain() {
        let s = Spectrogram::from_matrix(4, 1, vec![c(2.0, 0.0), c(0.0, 2.0), c(-2.0, 0.0), c(0.0, -2.0)]).unwrap();
        let out = Wiener { quantile: 0.5, min_gain: 0.2 }.denoise(&s).unwrap();
        for (o, i) in out.values().iter().zip(s.values()) {
            assert!((o - i * 0.2).norm() < 1e-15);
        }
    }

    #[test]
    fn wiener_passes_strong_entries() {
        let mut data = vec![c(1e-3, 0.0); 9];
        data.push(c(1e3, 0.0));
        let s = Spectrogram::from_matrix(10, 1, data).unwrap();
        let out = Wiener { quantile: 0.5, min_gain: 0.0 }.denoise(&s).unwrap();
        assert!((out.get(9, 0) - s.get(9, 0)).norm() / s.get(9, 0).norm() < 1e-9);
    }

    #[test]
    fn wiener_hand_evaluated_table() {
        // 4 frames x 3 bins; powers per bin are listed column-wise below.
        let vals = [
            [1.0, 2.0, 0.0],
            [2.0, 2.0, 1.0],
            [3.0, 2.0, 0.0],
            [4.0, 2.0, 0.0],
        ];
        let data = vals.iter().flatten().map(|&v| c(v, 0.0)).collect();
        let s = Spectrogram::from_matrix(4, 3, data).unwrap();
        let out = Wiener { quantile: 0.5, min_gain: 0.1 }.denoise(&s).unwrap();
        // bin 0: powers 1,4,9,16 -> median 6.5
        //   gains max(1 - 6.5/max(p, 6.5), 0.1) = 0.1, 0.1, 1-6.5/9, 1-6.5/16
        // bin 1: powers all 4 -> nu 4, gains 0.1
        // bin 2: powers 0,1,0,0 -> nu 0 -> gain 1
        let expect = [
            [0.1 * 1.0, 0.1 * 2.0, 0.0],
            [0.1 * 2.0, 0.1 * 2.0, 1.0],
            [(1.0 - 6.5 / 9.0) * 3.0, 0.1 * 2.0, 0.0],
            [(1.0 - 6.5 / 16.0) * 4.0, 0.1 * 2.0, 0.0],
        ];
        for n in 0..4 {
            for k in 0..3 {
                assert!((out.get(n, k).re - expect[n][k]).abs() < 1e-14, "({n},{k})");
            }
        }
    }

    #[test]
    fn median2d_cases() {
        let d = Median2d { frame_radius: 1, bin_radius: 1 };
        let constant = Spectrogram::from_matrix(4, 4, vec![c(0.0, 3.0); 16]).unwrap();
        assert_close(&d.denoise(&constant).unwrap(), &constant, 1e-15);

        let mut data = vec![Complex64::default(); 25];
        data[12] = c(5.0, 5.0);
        let impulse = Spectrogram::from_matrix(5, 5, data).unwrap();
        assert_eq!(d.denoise(&impulse).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn median2d_matches_sorting_oracle() {
        let s = random_spec(5, 5, 4);
        let out = Median2d { frame_radius: 1, bin_radius: 2 }.denoise(&s).unwrap();
        for n in 0..5i64 {
            for k in 0..5i64 {
                let mut w = Vec::new();
                for dn in -1..=1 {
                    for dk in -2..=2 {
                        let nn = (n + dn).clamp(0, 4) as usize;
                        let kk = (k + dk).clamp(0, 4) as usize;
                        w.push(s.get(nn, kk).norm());
                    }
                }
                w.sort_by(f64::total_cmp);
                let m = w[w.len() / 2];
                let v = s.get(n as usize, k as usize);
                assert!((out.get(n as usize, k as usize) - v / v.norm() * m).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn positive_homogeneity() {
        let s = random_spec(8, 6, 5);
        for spec in [
            DenoiserSpec::SoftThreshold { tau: 0.4 },
            DenoiserSpec::wiener(),
            DenoiserSpec::Median2d { frame_radius: 1, bin_radius: 1 },
        ] {
            let d = spec.build().unwrap();
            for alpha in [0.01, 3.7, 250.0] {
                let lhs = d.denoise(&s.scaled(alpha)).unwrap();
                let rhs = d.denoise(&s).unwrap().scaled(alpha);
                for (a, b) in lhs.values().iter().zip(rhs.values()) {
                    assert!((a - b).norm() <= 1e-10 * alpha, "{spec} alpha {alpha}");
                }
            }
        }
    }

    #[test]
    fn spec_validation() {
        assert!(DenoiserSpec::SoftThreshold { tau: -1.0 }.validate().is_err());
        assert!(DenoiserSpec::Wiener { quantile: 1.0, min_gain: 0.1 }.validate().is_err());
        assert!(DenoiserSpec::Wiener { quantile: 0.5, min_gain: 1.5 }.validate().is_err());
        assert!(DenoiserSpec::external("   ", None).is_err());
        assert_eq!(DenoiserSpec::wiener().label(), "wiener:0.5:0.1");
    }

    #[test]
    fn external_failure_reports_error() {
        let d = DenoiserSpec::external("false", None).unwrap().build().unwrap();
        let err = d.denoise(&random_spec(2, 2, 6)).unwrap_err();
        match err.root() {
            Error::Denoiser { message, .. } => assert!(message.contains("false")),
            other => panic!("unexpected {other:?}"),
        }
        let missing = DenoiserSpec::external("/definitely/not/here", None).unwrap().build().unwrap();
        assert!(matches!(missing.denoise(&random_spec(2, 2, 6)).unwrap_err().root(), Error::Denoiser { .. }));
    }
}
