//! Python bindings. Signals cross the boundary as lists of floats, one list
//! per channel.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use pnpwpe_core::denoise::DenoiserSpec;
use pnpwpe_core::error::Error;
use pnpwpe_core::{metrics, pnp, roomsim, wav, wpe};
use pnpwpe_core::{MultichannelTimeSignal, TimeSignal};
use pnpwpe_core::stft::{Stft, StftConfig};

fn py_err(e: Error) -> PyErr {
    let msg = e.to_string();
    match e.root() {
        Error::InvalidArgument(_) | Error::Geometry(_) => PyValueError::new_err(msg),
        Error::Io(_) | Error::Path { .. } | Error::Format(_) => PyIOError::new_err(msg),
        _ => PyRuntimeError::new_err(msg),
    }
}

fn multichannel(channels: Vec<Vec<f64>>, sample_rate: u32) -> PyResult<MultichannelTimeSignal> {
    let chans = channels
        .into_iter()
        .map(|c| TimeSignal::new(c, sample_rate))
        .collect::<Result<Vec<_>, _>>()
        .map_err(py_err)?;
    MultichannelTimeSignal::new(chans).map_err(py_err)
}

fn mono(samples: Vec<f64>, sample_rate: u32) -> PyResult<TimeSignal> {
    TimeSignal::new(samples, sample_rate).map_err(py_err)
}

fn samples(sig: &TimeSignal) -> Vec<f64> {
    sig.samples().to_vec()
}

/// WPE settings; `filter_order` is taps per channel.
#[pyclass(name = "WpeParams", from_py_object)]
#[derive(Clone)]
struct PyWpeParams {
    #[pyo3(get, set)]
    filter_order: usize,
    #[pyo3(get, set)]
    delay: usize,
    #[pyo3(get, set)]
    epsilon: f64,
    #[pyo3(get, set)]
    iterations: usize,
    #[pyo3(get, set)]
    reference_channel: usize,
}

#[pymethods]
impl PyWpeParams {
    #[new]
    #[pyo3(signature = (filter_order=28, delay=2, epsilon=1e-4, iterations=3, reference_channel=0))]
    fn new(filter_order: usize, delay: usize, epsilon: f64, iterations: usize, reference_channel: usize) -> Self {
        Self { filter_order, delay, epsilon, iterations, reference_channel }
    }

    fn __repr__(&self) -> String {
        format!(
            "WpeParams(filter_order={}, delay={}, epsilon={}, iterations={}, reference_channel={})",
            self.filter_order, self.delay, self.epsilon, self.iterations, self.reference_channel
        )
    }
}

impl PyWpeParams {
    fn to_core(&self) -> wpe::WpeParams {
        wpe::WpeParams {
            filter_order: self.filter_order,
            delay: self.delay,
            epsilon: self.epsilon,
            iterations: self.iterations,
            reference_channel: self.reference_channel,
            ..wpe::WpeParams::default()
        }
    }
}

/// PnP-WPE settings. `denoiser` uses the label syntax, e.g. `"wiener:0.5:0.1"`.
#[pyclass(name = "PnpParams", from_py_object)]
#[derive(Clone)]
struct PyPnpParams {
    #[pyo3(get, set)]
    wpe: PyWpeParams,
    #[pyo3(get, set)]
    rho: f64,
    #[pyo3(get, set)]
    mu: f64,
    #[pyo3(get, set)]
    inner_iters: usize,
    #[pyo3(get, set)]
    outer_iters: usize,
    #[pyo3(get, set)]
    denoiser: String,
    #[pyo3(get, set)]
    stop_tol: f64,
}

#[pymethods]
impl PyPnpParams {
    #[new]
    #[pyo3(signature = (wpe=None, rho=0.1, mu=0.5, inner_iters=1, outer_iters=10, denoiser="wiener".to_string(), stop_tol=1e-4))]
    fn new(
        wpe: Option<PyWpeParams>,
        rho: f64,
        mu: f64,
        inner_iters: usize,
        outer_iters: usize,
        denoiser: String,
        stop_tol: f64,
    ) -> PyResult<Self> {
        let out = Self {
            wpe: wpe.unwrap_or_else(|| PyWpeParams::new(28, 2, 1e-4, 3, 0)),
            rho,
            mu,
            inner_iters,
            outer_iters,
            denoiser,
            stop_tol,
        };
        // Channel count is unknown here; the reference channel must exist.
        out.to_core()?.validate(out.wpe.reference_channel + 1).map_err(py_err)?;
        Ok(out)
    }

    /// Regularization weight implied by `rho` and `mu`.
    fn beta(&self) -> PyResult<f64> {
        Ok(self.to_core()?.beta())
    }

    fn __repr__(&self) -> String {
        format!(
            "PnpParams(wpe={}, rho={}, mu={}, inner_iters={}, outer_iters={}, denoiser={:?}, stop_tol={})",
            self.wpe.__repr__(),
            self.rho,
            self.mu,
            self.inner_iters,
            self.outer_iters,
            self.denoiser,
            self.stop_tol
        )
    }
}

impl PyPnpParams {
    fn to_core(&self) -> PyResult<pnp::PnpParams> {
        Ok(pnp::PnpParams {
            wpe: self.wpe.to_core(),
            rho: self.rho,
            mu: self.mu,
            inner_iters: self.inner_iters,
            outer_iters: self.outer_iters,
            denoiser: self.denoiser.parse::<DenoiserSpec>().map_err(py_err)?,
            stop_tol: self.stop_tol,
        })
    }
}

#[pyclass(name = "MetricReport", frozen, skip_from_py_object)]
struct PyMetricReport {
    #[pyo3(get)]
    cd: f64,
    #[pyo3(get)]
    fwsegsnr: f64,
    #[pyo3(get)]
    frames_used: usize,
}

#[pymethods]
impl PyMetricReport {
    fn __repr__(&self) -> String {
        format!("MetricReport(cd={}, fwsegsnr={}, frames_used={})", self.cd, self.fwsegsnr, self.frames_used)
    }
}

/// Output of `pnpwpe`: the waveform estimate plus the per-iteration traces.
#[pyclass(name = "PnpResult", frozen, skip_from_py_object)]
struct PyPnpResult {
    #[pyo3(get)]
    estimate: Vec<f64>,
    #[pyo3(get)]
    error: Vec<f64>,
    #[pyo3(get)]
    residual: Vec<f64>,
    #[pyo3(get)]
    stopped_early: bool,
}

#[pyclass(name = "Scene", frozen, skip_from_py_object)]
struct PyScene {
    #[pyo3(get)]
    observed: Vec<Vec<f64>>,
    #[pyo3(get)]
    reference: Vec<f64>,
    #[pyo3(get)]
    clean: Vec<f64>,
    #[pyo3(get)]
    sample_rate: u32,
    #[pyo3(get)]
    t60: f64,
    #[pyo3(get)]
    meta: String,
}

fn stft_for(sample_rate: u32, frame_len: Option<usize>) -> PyResult<Stft> {
    let config = match frame_len {
        Some(f) => StftConfig::with_frame_len(f),
        None => StftConfig::for_sample_rate(sample_rate),
    }
    .map_err(py_err)?;
    Ok(Stft::new(config))
}

/// Analysis followed by synthesis; returns the reconstructed signal.
#[pyfunction]
#[pyo3(signature = (signal, sample_rate=16000, frame_len=None))]
fn stft_roundtrip(signal: Vec<f64>, sample_rate: u32, frame_len: Option<usize>) -> PyResult<Vec<f64>> {
    let stft = stft_for(sample_rate, frame_len)?;
    let sig = mono(signal, sample_rate)?;
    let spec = stft.analyze(&sig).map_err(py_err)?;
    Ok(samples(&stft.synthesize(&spec).map_err(py_err)?.resized(sig.len())))
}

/// Vanilla WPE on time-domain channels; returns the reference-channel estimate.
#[pyfunction]
#[pyo3(name = "wpe", signature = (channels, sample_rate=16000, params=None))]
fn run_wpe(channels: Vec<Vec<f64>>, sample_rate: u32, params: Option<PyWpeParams>) -> PyResult<Vec<f64>> {
    let input = multichannel(channels, sample_rate)?;
    let params = params.unwrap_or_else(|| PyWpeParams::new(28, 2, 1e-4, 3, 0)).to_core();
    let stft = stft_for(sample_rate, None)?;
    let observed = stft.analyze_multichannel(&input).map_err(py_err)?;
    let out = wpe::run_wpe(&observed, &params).map_err(py_err)?;
    Ok(samples(&stft.synthesize(&out.estimate).map_err(py_err)?.resized(input.len())))
}

/// PnP-WPE on time-domain channels.
#[pyfunction]
#[pyo3(name = "pnpwpe", signature = (channels, sample_rate=16000, params=None))]
fn run_pnpwpe(channels: Vec<Vec<f64>>, sample_rate: u32, params: Option<PyPnpParams>) -> PyResult<PyPnpResult> {
    let input = multichannel(channels, sample_rate)?;
    let params = match params {
        Some(p) => p.to_core()?,
        None => pnp::PnpParams::default(),
    };
    let stft = stft_for(sample_rate, None)?;
    let observed = stft.analyze_multichannel(&input).map_err(py_err)?;
    let out = pnp::run_pnpwpe(&observed, &params).map_err(py_err)?;
    let estimate = stft.synthesize(&out.estimate).map_err(py_err)?.resized(input.len());
    Ok(PyPnpResult {
        estimate: samples(&estimate),
        error: out.state.trace.iter().map(|t| t.error).collect(),
        residual: out.state.trace.iter().map(|t| t.residual).collect(),
        stopped_early: out.stopped_early,
    })
}

/// Cepstral distance and frequency-weighted segmental SNR.
#[pyfunction]
#[pyo3(signature = (reference, estimate, sample_rate=16000, align=true))]
fn evaluate(reference: Vec<f64>, estimate: Vec<f64>, sample_rate: u32, align: bool) -> PyResult<PyMetricReport> {
    let r = metrics::evaluate(&mono(reference, sample_rate)?, &mono(estimate, sample_rate)?, align).map_err(py_err)?;
    Ok(PyMetricReport { cd: r.cd, fwsegsnr: r.fwsegsnr, frames_used: r.frames_used })
}

#[pyfunction]
#[pyo3(signature = (seed, seconds=4.0, sample_rate=16000))]
fn synthetic_speech(seed: u64, seconds: f64, sample_rate: u32) -> PyResult<Vec<f64>> {
    Ok(samples(&roomsim::synthetic_speech(seed, seconds, sample_rate).map_err(py_err)?))
}

/// Renders `clean` (synthetic speech when omitted) in a sampled preset room.
/// `noise` is `None` or `"wgn"`.
#[pyfunction]
#[pyo3(signature = (preset="A", seed=0, clean=None, sample_rate=16000, noise=None, snr_db=10.0))]
fn simulate_scene(
    preset: &str,
    seed: u64,
    clean: Option<Vec<f64>>,
    sample_rate: u32,
    noise: Option<&str>,
    snr_db: f64,
) -> PyResult<PyScene> {
    let preset: roomsim::Preset = preset.parse().map_err(py_err)?;
    let clean = match clean {
        Some(c) => mono(c, sample_rate)?,
        None => roomsim::synthetic_speech(seed, 4.0, sample_rate).map_err(py_err)?,
    };
    let noise = match noise {
        None | Some("none") => None,
        Some("wgn") => Some(roomsim::Noise::White),
        Some(other) => return Err(PyValueError::new_err(format!("unknown noise '{other}'"))),
    };
    let scene = roomsim::simulate_preset_scene(preset, seed, &clean, noise.as_ref(), snr_db).map_err(py_err)?;
    Ok(PyScene {
        observed: scene.observed.channels().iter().map(samples).collect(),
        reference: samples(&scene.reference),
        clean: samples(&scene.clean),
        sample_rate,
        t60: scene.meta.t60,
        meta: scene.meta.to_text(),
    })
}

/// Schroeder-integrated T60 of an impulse response.
#[pyfunction]
#[pyo3(signature = (rir, sample_rate=16000))]
fn measure_t60(rir: Vec<f64>, sample_rate: u32) -> PyResult<f64> {
    roomsim::measure_t60(&mono(rir, sample_rate)?).map_err(py_err)
}

/// Returns `(channels, sample_rate)`.
#[pyfunction]
fn read_wav(path: &str) -> PyResult<(Vec<Vec<f64>>, u32)> {
    let sig = wav::read_wav(path).map_err(py_err)?;
    Ok((sig.channels().iter().map(samples).collect(), sig.sample_rate()))
}

#[pyfunction]
#[pyo3(signature = (path, channels, sample_rate=16000, encoding="float32"))]
fn write_wav(path: &str, channels: Vec<Vec<f64>>, sample_rate: u32, encoding: &str) -> PyResult<()> {
    let enc: wav::WavEncoding = encoding.parse().map_err(py_err)?;
    wav::write_wav(&multichannel(channels, sample_rate)?, path, enc).map_err(py_err)
}

#[pymodule]
fn pnpwpe(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyWpeParams>()?;
    m.add_class::<PyPnpParams>()?;
    m.add_class::<PyMetricReport>()?;
    m.add_class::<PyPnpResult>()?;
    m.add_class::<PyScene>()?;
    m.add_function(wrap_pyfunction!(stft_roundtrip, m)?)?;
    m.add_function(wrap_pyfunction!(run_wpe, m)?)?;
    m.add_function(wrap_pyfunction!(run_pnpwpe, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_speech, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_scene, m)?)?;
    m.add_function(wrap_pyfunction!(measure_t60, m)?)?;
    m.add_function(wrap_pyfunction!(read_wav, m)?)?;
    m.add_function(wrap_pyfunction!(write_wav, m)?)?;
    Ok(())
}
