//! Iterative weighted prediction error (WPE) dereverberation.
//!
//! In every frequency band the late reverberation of the reference channel
//! is predicted from `L` delayed frames of all `Q` channels and subtracted.
//! The filter solve and the PSD estimate of the residual alternate for a
//! fixed number of iterations.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerics::{ScaledColumns, DEFAULT_LOADING};
use crate::stft::{MultichannelSpectrogram, Spectrogram};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WpeParams {
    /// Taps per channel (`L`).
    pub filter_order: usize,
    /// Prediction delay in frames (`D`).
    pub delay: usize,
    /// PSD floor.
    pub epsilon: f64,
    pub iterations: usize,
    pub reference_channel: usize,
    /// Relative diagonal loading of the normal equations.
    pub loading: f64,
}

impl Default for WpeParams {
    fn default() -> Self {
        Self {
            filter_order: 28,
            delay: 2,
            epsilon: 1e-4,
            iterations: 3,
            reference_channel: 0,
            loading: DEFAULT_LOADING,
        }
    }
}

impl WpeParams {
    pub fn validate(&self, num_channels: usize) -> Result<()> {
        if self.filter_order == 0 {
            return Err(Error::invalid("filter order must be at least 1"));
        }
        if self.delay == 0 {
            return Err(Error::invalid("prediction delay must be at least 1"));
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::invalid("epsilon must be positive"));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("at least one iteration is required"));
        }
        if self.reference_channel >= num_channels {
            return Err(Error::invalid(format!(
                "reference channel {} out of range for {num_channels} channels",
                self.reference_channel
            )));
        }
        if !(self.loading >= 0.0) {
            return Err(Error::invalid("diagonal loading must be non-negative"));
        }
        Ok(())
    }
}

/// Per-band prediction filters, each of length `L * Q`, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    taps: usize,
    weights: Vec<Vec<Complex64>>,
}

impl FilterBank {
    pub fn zeros(bins: usize, taps: usize) -> Self {
        Self {
            taps,
            weights: vec![vec![Complex64::default(); taps]; bins],
        }
    }

    pub fn from_weights(weights: Vec<Vec<Complex64>>) -> Result<Self> {
        let taps = weights.first().map_or(0, Vec::len);
        if weights.iter().any(|w| w.len() != taps) {
            return Err(Error::invalid("filters must share one length"));
        }
        if weights.iter().flatten().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::invalid("filters contain non-finite values"));
        }
        Ok(Self { taps, weights })
    }

    pub fn taps(&self) -> usize {
        self.taps
    }

    pub fn bins(&self) -> usize {
        self.weights.len()
    }

    pub fn band(&self, k: usize) -> &[Complex64] {
        &self.weights[k]
    }

    pub fn bands(&self) -> &[Vec<Complex64>] {
        &self.weights
    }

    pub fn max_norm(&self) -> f64 {
        self.weights
            .iter()
            .map(|w| w.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

/// Real `frames x bins` matrix (PSD, weights).
#[derive(Debug, Clone, PartialEq)]
pub struct PowerMatrix {
    frames: usize,
    bins: usize,
    values: Vec<f64>,
}

impl PowerMatrix {
    pub fn from_fn(frames: usize, bins: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(frames * bins);
        for n in 0..frames {
            for k in 0..bins {
                values.push(f(n, k));
            }
        }
        Self {
            frames,
            bins,
            values,
        }
    }

    #[inline]
    pub fn get(&self, n: usize, k: usize) -> f64 {
        self.values[n * self.bins + k]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.frames, self.bins)
    }

    pub fn band(&self, k: usize) -> Vec<f64> {
        (0..self.frames).map(|n| self.get(n, k)).collect()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }
}

/// Stacked delayed frames `(X_1(n-D), .., X_1(n-D-L+1), X_2(n-D), ..)` for
/// frame `n`, bin `k`; frames before the start read as zero.
pub fn build_regressor(
    spec: &MultichannelSpectrogram,
    n: usize,
    k: usize,
    delay: usize,
    order: usize,
) -> Vec<Complex64> {
    let mut v = Vec::with_capacity(order * spec.num_channels());
    for ch in spec.channels() {
        for l in 0..order {
            v.push(delayed(ch, n, k, delay + l));
        }
    }
    v
}

#[inline]
fn delayed(ch: &Spectrogram, n: usize, k: usize, lag: usize) -> Complex64 {
    if n >= lag {
        ch.get(n - lag, k)
    } else {
        Complex64::default()
    }
}

/// `max(|S(n,k)|^2, epsilon)` entrywise.
pub fn estimate_psd(s_hat: &Spectrogram, epsilon: f64) -> PowerMatrix {
    PowerMatrix::from_fn(s_hat.frames(), s_hat.bins(), |n, k| {
        s_hat.get(n, k).norm_sqr().max(epsilon)
    })
}

/// Prediction residual `X_ref(n,k) - w(k)^H x(n-D,k)`.
pub fn apply_filters(
    observed: &MultichannelSpectrogram,
    filters: &FilterBank,
    delay: usize,
    order: usize,
    reference_channel: usize,
) -> Result<Spectrogram> {
    let q = observed.num_channels();
    if reference_channel >= q {
        return Err(Error::invalid("reference channel out of range"));
    }
    if filters.bins() != observed.bins() || filters.taps() != order * q {
        return Err(Error::invalid(format!(
            "filter bank {}x{} does not fit {} bins with L*Q = {}",
            filters.bins(),
            filters.taps(),
            observed.bins(),
            order * q
        )));
    }
    let reference = observed.channel(reference_channel);
    let mut out = reference.clone();
    for k in 0..observed.bins() {
        let w = filters.band(k);
        if w.iter().all(|v| *v == Complex64::default()) {
            continue;
        }
        for n in 0..observed.frames() {
            let mut pred = Complex64::default();
            for (c, ch) in observed.channels().iter().enumerate() {
                for l in 0..order {
                    pred += w[c * order + l].conj() * delayed(ch, n, k, delay + l);
                }
            }
            out.set(n, k, reference.get(n, k) - pred);
        }
    }
    Ok(out)
}

/// Solves the weighted least-squares filter of one band for the given targets
/// and weights.
pub(crate) fn solve_band(
    observed: &MultichannelSpectrogram,
    k: usize,
    delay: usize,
    order: usize,
    targets: &[Complex64],
    lambdas: &[f64],
    loading: f64,
) -> Result<Vec<Complex64>> {
    let dim = order * observed.num_channels();
    let channels = observed.channels();
    let cols = ScaledColumns::build(
        dim,
        observed.frames(),
        |i, n| delayed(&channels[i / order], n, k, delay + i % order),
        targets,
        lambdas,
    )?;
    cols.normal_equations()
        .solve(loading)
        .map_err(|_| Error::Singular { band: k })
}

/// Weighted cost `sum |S(n,k)|^2 / sigma(n,k)` of one band.
pub(crate) fn weighted_cost(s_hat: &Spectrogram, sigma: &PowerMatrix, k: usize) -> f64 {
    (0..s_hat.frames())
        .map(|n| s_hat.get(n, k).norm_sqr() / sigma.get(n, k))
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct WpeIteration {
    /// Weighted cost with this iteration's PSD before the filter solve.
    pub cost_before: f64,
    /// Same PSD, after the filter solve.
    pub cost_after: f64,
}

#[derive(Debug, Clone)]
pub struct WpeOutput {
    pub estimate: Spectrogram,
    pub filters: FilterBank,
    pub trace: Vec<WpeIteration>,
}

pub fn run_wpe(observed: &MultichannelSpectrogram, params: &WpeParams) -> Result<WpeOutput> {
    params.validate(observed.num_channels())?;
    if observed.frames() <= params.delay {
        return Err(Error::invalid(format!(
            "{} frames is not more than the prediction delay {}",
            observed.frames(),
            params.delay
        )));
    }
    let taps = params.filter_order * observed.num_channels();
    let reference = observed.channel(params.reference_channel);
    let mut filters = FilterBank::zeros(observed.bins(), taps);
    let mut estimate = reference.clone();
    let mut trace = Vec::with_capacity(params.iterations);

    for _ in 0..params.iterations {
        let sigma = estimate_psd(&estimate, params.epsilon);
        let mut cost_before = 0.0;
        let mut weights = Vec::with_capacity(observed.bins());
        for k in 0..observed.bins() {
            cost_before += weighted_cost(&estimate, &sigma, k);
            let w = solve_band(
                observed,
                k,
                params.delay,
                params.filter_order,
                &reference.band(k),
                &sigma.band(k),
                params.loading,
            )?;
            weights.push(w);
        }
        filters = FilterBank::from_weights(weights)?;
        estimate = apply_filters(
            observed,
            &filters,
            params.delay,
            params.filter_order,
            params.reference_channel,
        )?;
        let cost_after = (0..observed.bins())
            .map(|k| weighted_cost(&estimate, &sigma, k))
            .sum();
        trace.push(WpeIteration {
            cost_before,
            cost_after,
        });
    }
    Ok(WpeOutput {
        estimate,
        filters,
        trace,
    })
}
