//! Plug-and-play WPE: ADMM with a regularization-by-denoising prior.
//!
//! The solver alternates four updates per outer iteration:
//!
//! 1. prediction filters from a weighted least-squares problem whose weights
//!    `lambda = 2 sigma / (2 + rho sigma)` and targets
//!    `X~ = X_ref - (rho/2) lambda (R + V - P)` fold in the augmented
//!    Lagrangian term;
//! 2. the speech estimate `R`, by a fixed-point mix of `R~ = S^ - V + P` and
//!    its denoised version;
//! 3. the noise estimate `V = S^ - R + P`;
//! 4. the scaled dual `P += S^ - V - R`.
//!
//! `S^` is the prediction residual of the current filters. `R` is the output.

use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;

use crate::denoise::{Denoiser, DenoiserSpec};
use crate::error::{Error, Result};
use crate::output::write_atomic;
use crate::signal::{MultichannelTimeSignal, TimeSignal};
use crate::stft::{MultichannelSpectrogram, Spectrogram, Stft, StftConfig};
use crate::wpe::{self, estimate_psd, FilterBank, PowerMatrix, WpeParams};

#[derive(Debug, Clone, PartialEq)]
pub struct PnpParams {
    /// `L`, `D`, `epsilon`, reference channel and loading; `iterations` is
    /// not used here.
    pub wpe: WpeParams,
    pub rho: f64,
    /// Fixed-point weight `rho / (rho + beta)`; 1 disables the prior.
    pub mu: f64,
    pub inner_iters: usize,
    pub outer_iters: usize,
    pub denoiser: DenoiserSpec,
    /// Relative change of the constraint error below which iteration stops;
    /// 0 runs all `outer_iters`.
    pub stop_tol: f64,
}

impl Default for PnpParams {
    fn default() -> Self {
        Self {
            wpe: WpeParams::default(),
            rho: 0.1,
            mu: 0.5,
            inner_iters: 1,
            outer_iters: 10,
            denoiser: DenoiserSpec::wiener(),
            stop_tol: 1e-4,
        }
    }
}

impl PnpParams {
    /// Regularization weight implied by `rho` and `mu`.
    pub fn beta(&self) -> f64 {
        self.rho * (1.0 - self.mu) / self.mu
    }

    pub fn validate(&self, num_channels: usize) -> Result<()> {
        self.wpe.validate(num_channels)?;
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(Error::invalid(format!("rho {} must be positive", self.rho)));
        }
        if !(self.mu > 0.0 && self.mu <= 1.0) {
            return Err(Error::invalid(format!("mu {} must be in (0, 1]", self.mu)));
        }
        if self.inner_iters == 0 || self.outer_iters == 0 {
            return Err(Error::invalid("iteration counts must be at least 1"));
        }
        if !(self.stop_tol >= 0.0) {
            return Err(Error::invalid("stop tolerance must be non-negative"));
        }
        self.denoiser.validate()
    }
}

/// `2 sigma / (2 + rho sigma)`.
#[inline]
pub fn compute_lambda(sigma: f64, rho: f64) -> f64 {
    2.0 * sigma / (2.0 + rho * sigma)
}

fn zip_map3(
    a: &Spectrogram,
    b: &Spectrogram,
    c: &Spectrogram,
    what: &str,
    f: impl Fn(Complex64, Complex64, Complex64) -> Complex64,
) -> Result<Spectrogram> {
    a.check_shape(b, what)?;
    a.check_shape(c, what)?;
    let mut out = a.clone();
    for (i, o) in out.values_mut().iter_mut().enumerate() {
        *o = f(a.values()[i], b.values()[i], c.values()[i]);
    }
    Ok(out)
}

/// `X_ref - (rho/2) lambda (R + V - P)` entrywise.
pub fn compute_xtilde(
    x_ref: &Spectrogram,
    r: &Spectrogram,
    v: &Spectrogram,
    p: &Spectrogram,
    lambda: &PowerMatrix,
    rho: f64,
) -> Result<Spectrogram> {
    if lambda.shape() != x_ref.shape() {
        return Err(Error::invalid("lambda shape does not match the spectrogram"));
    }
    let mut out = zip_map3(r, v, p, "compute_xtilde", |r, v, p| r + v - p)?;
    x_ref.check_shape(&out, "compute_xtilde")?;
    for (i, o) in out.values_mut().iter_mut().enumerate() {
        *o = x_ref.values()[i] - *o * (0.5 * rho * lambda.values()[i]);
    }
    Ok(out)
}

/// `S^ - V + P`.
pub fn compute_rtilde(s_hat: &Spectrogram, v: &Spectrogram, p: &Spectrogram) -> Result<Spectrogram> {
    zip_map3(s_hat, v, p, "compute_rtilde", |s, v, p| s - v + p)
}

/// `S^ - R + P`.
pub fn update_v(s_hat: &Spectrogram, r: &Spectrogram, p: &Spectrogram) -> Result<Spectrogram> {
    zip_map3(s_hat, r, p, "update_v", |s, r, p| s - r + p)
}

/// `P + S^ - V - R`.
pub fn update_p(p: &Spectrogram, s_hat: &Spectrogram, v: &Spectrogram, r: &Spectrogram) -> Result<Spectrogram> {
    let partial = zip_map3(p, s_hat, v, "update_p", |p, s, v| p + s - v)?;
    partial.check_shape(r, "update_p")?;
    let mut out = partial;
    for (o, r) in out.values_mut().iter_mut().zip(r.values()) {
        *o -= r;
    }
    Ok(out)
}

/// Fixed-point speech update `R = mu R~ + (1 - mu) Omega(arg)`.
///
/// The first inner step denoises `R~`; later steps denoise the previous inner
/// iterate.
pub fn update_r(r_tilde: &Spectrogram, denoiser: &dyn Denoiser, mu: f64, inner_iters: usize) -> Result<Spectrogram> {
    if !(mu > 0.0 && mu <= 1.0) {
        return Err(Error::invalid(format!("mu {mu} must be in (0, 1]")));
    }
    if mu == 1.0 {
        return Ok(r_tilde.clone());
    }
    let mut r = r_tilde.clone();
    for _ in 0..inner_iters.max(1) {
        let denoised = denoiser.denoise(&r)?;
        r_tilde.check_shape(&denoised, "denoiser output")?;
        if denoised.values().iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Denoiser {
                message: "denoiser produced non-finite values".into(),
                stderr: String::new(),
            });
        }
        for ((o, t), d) in r.values_mut().iter_mut().zip(r_tilde.values()).zip(denoised.values()) {
            // Written as an offset so that `d == t` returns `t` exactly.
            *o = t + (d - t) * (1.0 - mu);
        }
    }
    Ok(r)
}

/// Mean of `|R - S^ - V|^2`.
pub fn constraint_error(r: &Spectrogram, s_hat: &Spectrogram, v: &Spectrogram) -> Result<f64> {
    mean_sq(r, s_hat, v, -1.0)
}

/// Mean of `|R - S^ + V|^2`, the residual of `R = S^ - V`.
pub fn constraint_residual(r: &Spectrogram, s_hat: &Spectrogram, v: &Spectrogram) -> Result<f64> {
    mean_sq(r, s_hat, v, 1.0)
}

fn mean_sq(r: &Spectrogram, s_hat: &Spectrogram, v: &Spectrogram, v_sign: f64) -> Result<f64> {
    r.check_shape(s_hat, "constraint error")?;
    r.check_shape(v, "constraint error")?;
    let count = r.values().len();
    if count == 0 {
        return Ok(0.0);
    }
    let sum: f64 = r
        .values()
        .iter()
        .zip(s_hat.values())
        .zip(v.values())
        .map(|((r, s), v)| (r - s + v * v_sign).norm_sqr())
        .sum();
    Ok(sum / count as f64)
}

fn lambda_matrix(sigma: &PowerMatrix, rho: f64) -> PowerMatrix {
    sigma.map(|s| compute_lambda(s, rho))
}

fn filter_step(
    observed: &MultichannelSpectrogram,
    r: &Spectrogram,
    v: &Spectrogram,
    p: &Spectrogram,
    sigma: &PowerMatrix,
    params: &PnpParams,
) -> Result<(FilterBank, PowerMatrix)> {
    let x_ref = observed.channel(params.wpe.reference_channel);
    if sigma.shape() != x_ref.shape() {
        return Err(Error::invalid("sigma shape does not match the observation"));
    }
    let lambda = lambda_matrix(sigma, params.rho);
    let x_tilde = compute_xtilde(x_ref, r, v, p, &lambda, params.rho)?;
    let mut weights = Vec::with_capacity(observed.bins());
    for k in 0..observed.bins() {
        weights.push(wpe::solve_band(
            observed,
            k,
            params.wpe.delay,
            params.wpe.filter_order,
            &x_tilde.band(k),
            &lambda.band(k),
            params.wpe.loading,
        )?);
    }
    Ok((FilterBank::from_weights(weights)?, lambda))
}

/// Filter update of one outer iteration given the current `R`, `V`, `P` and
/// PSD `sigma`.
pub fn update_filters(
    observed: &MultichannelSpectrogram,
    r: &Spectrogram,
    v: &Spectrogram,
    p: &Spectrogram,
    sigma: &PowerMatrix,
    params: &PnpParams,
) -> Result<FilterBank> {
    params.validate(observed.num_channels())?;
    filter_step(observed, r, v, p, sigma, params).map(|(f, _)| f)
}

/// Prediction residual `X_ref - w^H x(n - D)` (noise not removed).
pub fn prediction_error(
    observed: &MultichannelSpectrogram,
    filters: &FilterBank,
    params: &PnpParams,
) -> Result<Spectrogram> {
    wpe::apply_filters(
        observed,
        filters,
        params.wpe.delay,
        params.wpe.filter_order,
        params.wpe.reference_channel,
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    /// Mean `|R - S^ - V|^2`.
    pub error: f64,
    /// Mean `|R - S^ + V|^2`.
    pub residual: f64,
    /// `||R_l - R_{l-1}|| / ||R_l||`, 0 when `R_l` is zero.
    pub r_change: f64,
}

#[derive(Debug, Clone)]
pub struct AdmmState {
    pub filters: FilterBank,
    pub s_hat: Spectrogram,
    pub r: Spectrogram,
    pub v: Spectrogram,
    pub p: Spectrogram,
    pub sigma: PowerMatrix,
    pub lambda: PowerMatrix,
    pub trace: Vec<IterationRecord>,
}

impl AdmmState {
    fn initial(observed: &MultichannelSpectrogram, params: &PnpParams) -> Self {
        let x_ref = observed.channel(params.wpe.reference_channel);
        let zero = x_ref.zeros_like();
        let sigma = estimate_psd(x_ref, params.wpe.epsilon);
        Self {
            filters: FilterBank::zeros(observed.bins(), params.wpe.filter_order * observed.num_channels()),
            s_hat: x_ref.clone(),
            r: zero.clone(),
            v: zero.clone(),
            p: zero,
            lambda: lambda_matrix(&sigma, params.rho),
            sigma,
            trace: Vec::new(),
        }
    }

    pub fn error_trace(&self) -> Vec<f64> {
        self.trace.iter().map(|t| t.error).collect()
    }
}

#[derive(Debug, Clone)]
pub struct PnpOutput {
    /// The speech estimate `R`.
    pub estimate: Spectrogram,
    pub state: AdmmState,
    /// True when iteration stopped on `stop_tol` before `outer_iters`.
    pub stopped_early: bool,
}

/// Relative change used by the stopping rule: of the constraint error when
/// the previous error is positive, otherwise of `R`.
fn relative_change(prev: &IterationRecord, cur: &IterationRecord) -> f64 {
    if prev.error > 0.0 {
        (cur.error - prev.error).abs() / prev.error
    } else {
        cur.r_change
    }
}

/// First 1-based iteration after which every relative change stays below
/// `tol`, or `None` if the last one does not.
pub fn plateau_iteration(trace: &[IterationRecord], tol: f64) -> Option<usize> {
    let mut first = None;
    for i in 1..trace.len() {
        if relative_change(&trace[i - 1], &trace[i]) < tol {
            first.get_or_insert(i + 1);
        } else {
            first = None;
        }
    }
    first
}

pub fn run_pnpwpe(observed: &MultichannelSpectrogram, params: &PnpParams) -> Result<PnpOutput> {
    run_pnpwpe_observed(observed, params, |_, _| {})
}

/// `run_pnpwpe` calling `observer(iteration, state)` after every outer
/// iteration (1-based).
pub fn run_pnpwpe_observed(
    observed: &MultichannelSpectrogram,
    params: &PnpParams,
    mut observer: impl FnMut(usize, &AdmmState),
) -> Result<PnpOutput> {
    params.validate(observed.num_channels())?;
    if observed.frames() <= params.wpe.delay {
        return Err(Error::invalid(format!(
            "{} frames is not more than the prediction delay {}",
            observed.frames(),
            params.wpe.delay
        )));
    }
    let denoiser = params.denoiser.build()?;
    let mut state = AdmmState::initial(observed, params);
    let mut stopped_early = false;

    for iteration in 1..=params.outer_iters {
        let ctx = |e: Error| e.context(format!("outer iteration {iteration}"));
        let sigma = estimate_psd(&state.s_hat, params.wpe.epsilon);
        let (filters, lambda) =
            filter_step(observed, &state.r, &state.v, &state.p, &sigma, params).map_err(ctx)?;
        let s_hat = prediction_error(observed, &filters, params)?;
        let r_tilde = compute_rtilde(&s_hat, &state.v, &state.p)?;
        let r = update_r(&r_tilde, denoiser.as_ref(), params.mu, params.inner_iters).map_err(ctx)?;
        let v = update_v(&s_hat, &r, &state.p)?;
        let p = update_p(&state.p, &s_hat, &v, &r)?;

        let r_norm = r.norm();
        let r_change = if r_norm > 0.0 {
            let diff: f64 = r
                .values()
                .iter()
                .zip(state.r.values())
                .map(|(a, b)| (a - b).norm_sqr())
                .sum();
            diff.sqrt() / r_norm
        } else {
            0.0
        };
        let record = IterationRecord {
            error: constraint_error(&r, &s_hat, &v)?,
            residual: constraint_residual(&r, &s_hat, &v)?,
            r_change,
        };
        state = AdmmState {
            filters,
            s_hat,
            r,
            v,
            p,
            sigma,
            lambda,
            trace: std::mem::take(&mut state.trace),
        };
        state.trace.push(record);
        observer(iteration, &state);

        if params.stop_tol > 0.0 && iteration >= 2 && iteration < params.outer_iters {
            let prev = &state.trace[state.trace.len() - 2];
            if relative_change(prev, &record) < params.stop_tol {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(PnpOutput {
        estimate: state.r.clone(),
        state,
        stopped_early,
    })
}

/// STFT analysis, PnP-WPE, and synthesis of `R`; the output has the input's
/// length.
pub fn time_domain_pipeline(
    input: &MultichannelTimeSignal,
    params: &PnpParams,
    config: StftConfig,
) -> Result<TimeSignal> {
    let stft = Stft::new(config);
    let observed = stft.analyze_multichannel(input)?;
    let out = run_pnpwpe(&observed, params)?;
    stft.synthesize(&out.estimate)
}

/// CSV with header `iteration,error,residual`.
pub fn trace_csv(trace: &[IterationRecord]) -> String {
    let mut s = String::from("iteration,error,residual\n");
    for (i, t) in trace.iter().enumerate() {
        let _ = writeln!(s, "{},{:e},{:e}", i + 1, t.error, t.residual);
    }
    s
}

pub fn write_trace_csv(trace: &[IterationRecord], path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path, trace_csv(trace).as_bytes())
}
