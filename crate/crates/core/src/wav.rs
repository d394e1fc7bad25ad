//! RIFF/WAVE reading and writing (PCM16 and IEEE float32).

use std::io::{BufWriter, Write};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};
use crate::signal::{MultichannelTimeSignal, TimeSignal};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavEncoding {
    Pcm16,
    Float32,
}

impl std::str::FromStr for WavEncoding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pcm16" => Ok(WavEncoding::Pcm16),
            "float32" => Ok(WavEncoding::Float32),
            other => Err(Error::invalid(format!("unknown WAV encoding '{other}'"))),
        }
    }
}

fn map_hound(path: &Path, err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(e) => Error::path(path, e),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

/// Reads every channel of a PCM16 or float32 WAV file.
///
/// PCM16 samples are divided by 32768; float32 samples are widened unchanged.
pub fn read_wav(path: impl AsRef<Path>) -> Result<MultichannelTimeSignal> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    let nch = spec.channels as usize;
    if nch == 0 {
        return Err(Error::Format(format!("{}: zero channels", path.display())));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| f64::from(v) / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (fmt, bits) => {
            return Err(Error::Format(format!(
                "{}: unsupported encoding {fmt:?} {bits}-bit",
                path.display()
            )))
        }
    };
    if !interleaved.len().is_multiple_of(nch) {
        return Err(Error::path(
            path,
            std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "partial sample frame"),
        ));
    }
    let frames = interleaved.len() / nch;
    let channels = (0..nch)
        .map(|c| {
            let samples = (0..frames).map(|t| interleaved[t * nch + c]).collect();
            TimeSignal::new(samples, spec.sample_rate)
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| match e {
            Error::InvalidArgument(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })?;
    MultichannelTimeSignal::new(channels)
}

/// Converts a sample to PCM16: clamp to [-1, 1), round half away from zero.
pub fn to_pcm16(sample: f64) -> i16 {
    (sample * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Writes `signal` as a WAV file. The file appears at `path` only once it is
/// complete.
pub fn write_wav(
    signal: &MultichannelTimeSignal,
    path: impl AsRef<Path>,
    encoding: WavEncoding,
) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: u16::try_from(signal.num_channels())
            .map_err(|_| Error::invalid("too many channels for WAV"))?,
        sample_rate: signal.sample_rate(),
        bits_per_sample: match encoding {
            WavEncoding::Pcm16 => 16,
            WavEncoding::Float32 => 32,
        },
        sample_format: match encoding {
            WavEncoding::Pcm16 => SampleFormat::Int,
            WavEncoding::Float32 => SampleFormat::Float,
        },
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::path(path, e))?;
    {
        let mut writer = WavWriter::new(BufWriter::new(tmp.as_file()), spec)
            .map_err(|e| map_hound(path, e))?;
        for t in 0..signal.len() {
            for ch in signal.channels() {
                let v = ch.samples()[t];
                match encoding {
                    WavEncoding::Pcm16 => writer.write_sample(to_pcm16(v)),
                    WavEncoding::Float32 => writer.write_sample(v as f32),
                }
                .map_err(|e| map_hound(path, e))?;
            }
        }
        writer.finalize().map_err(|e| map_hound(path, e))?;
    }
    tmp.as_file().flush().map_err(|e| Error::path(path, e))?;
    tmp.persist(path).map_err(|e| Error::path(path, e.error))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mono(v: &[f64]) -> MultichannelTimeSignal {
        MultichannelTimeSignal::from_mono(TimeSignal::new(v.to_vec(), 16000).unwrap())
    }

    #[test]
    fn pcm16_half_scale() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&p, spec).unwrap();
        w.write_sample(16384i16).unwrap();
        w.finalize().unwrap();
        let s = read_wav(&p).unwrap();
        assert_eq!(s.channel(0).unwrap().samples(), &[0.5]);
    }

    #[test]
    fn empty_float_file_has_two_channels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.wav");
        let sig = MultichannelTimeSignal::new(vec![
            TimeSignal::new(vec![], 8000).unwrap(),
            TimeSignal::new(vec![], 8000).unwrap(),
        ])
        .unwrap();
        write_wav(&sig, &p, WavEncoding::Float32).unwrap();
        let back = read_wav(&p).unwrap();
        assert_eq!(back.num_channels(), 2);
        assert!(back.is_empty());
    }

    #[test]
    fn float32_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.wav");
        let vals: Vec<f64> = (0..300).map(|i| ((i as f32) * 0.013).sin() as f64).collect();
        let sig = MultichannelTimeSignal::new(vec![
            TimeSignal::new(vals.clone(), 16000).unwrap(),
            TimeSignal::new(vals.iter().map(|v| -v).collect(), 16000).unwrap(),
        ])
        .unwrap();
        write_wav(&sig, &p, WavEncoding::Float32).unwrap();
        assert_eq!(read_wav(&p).unwrap(), sig);
    }

    #[test]
    fn pcm16_clamps_and_rounds() {
        assert_eq!(to_pcm16(1.5), 32767);
        assert_eq!(to_pcm16(-1.0), -32768);
        assert_eq!(to_pcm16(-7.0), -32768);
        assert_eq!(to_pcm16(0.5 / 32768.0), 1);
        assert_eq!(to_pcm16(-0.5 / 32768.0), -1);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.wav");
        write_wav(&mono(&[1.5, -1.0]), &p, WavEncoding::Pcm16).unwrap();
        let raw: Vec<i16> = WavReader::open(&p)
            .unwrap()
            .into_samples::<i16>()
            .map(|s| s.unwrap())
            .collect();
        assert_eq!(raw, vec![32767, -32768]);
    }

    #[test]
    fn unsupported_and_truncated_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("u.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 24,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&p, spec).unwrap();
        w.write_sample(5i32).unwrap();
        w.finalize().unwrap();
        assert!(matches!(read_wav(&p), Err(Error::Format(_))));

        let t = dir.path().join("t.wav");
        write_wav(&mono(&[0.1; 100]), &t, WavEncoding::Float32).unwrap();
        let bytes = std::fs::read(&t).unwrap();
        std::fs::write(&t, &bytes[..bytes.len() - 10]).unwrap();
        assert!(matches!(read_wav(&t), Err(Error::Path { .. })));

        assert!(matches!(
            read_wav(dir.path().join("missing.wav")),
            Err(Error::Path { .. })
        ));
    }

    #[test]
    fn unwritable_path_is_io_error() {
        let r = write_wav(&mono(&[0.0]), "/nonexistent-dir/x.wav", WavEncoding::Pcm16);
        assert!(matches!(r, Err(Error::Path { .. })));
    }
}
