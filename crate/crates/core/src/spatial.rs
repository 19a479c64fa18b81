//! GCC-PHAT cross-correlation, the pairs × delay-bins feature tensor, TDOA
//! peak picking and least-squares far-field DOA.
//!
//! Lag convention: if `x_j(t) = x_i(t - D)` (mic j hears the wavefront D
//! samples after mic i), the correlation of pair (i, j) peaks at lag `+D`.
//! This matches `farfield_delays(d)[j] - farfield_delays(d)[i]`.

use nalgebra::{DMatrix, DVector, Vector3};
use num_complex::Complex64;
use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, ArrayGeometry, Direction};

/// Regularizer in the PHAT denominator.
pub const PHAT_EPS: f64 = 1e-8;
pub const DEFAULT_BINS: usize = 64;

/// Circular cross-correlation over every lag of an FFT of length `len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossCorrelation {
    values: Vec<f64>,
}

impl CrossCorrelation {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Value at a signed lag; negative lags wrap around.
    pub fn at(&self, lag: i64) -> f64 {
        let n = self.values.len() as i64;
        self.values[lag.rem_euclid(n) as usize]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Integer lag of the largest value within `±radius`.
    pub fn peak_lag(&self, radius: usize) -> i64 {
        let r = radius as i64;
        best_lag((-r..=r).map(|l| (l, self.at(l))))
    }
}

/// Argmax with ties broken toward the smaller |lag|, then the negative side.
fn best_lag(values: impl Iterator<Item = (i64, f64)>) -> i64 {
    let mut best: Option<(i64, f64)> = None;
    for (lag, v) in values {
        best = match best {
            Some((bl, bv)) if bv > v || (bv == v && (bl.abs(), bl) <= (lag.abs(), lag)) => Some((bl, bv)),
            _ => Some((lag, v)),
        };
    }
    best.map(|b| b.0).unwrap_or(0)
}

struct Spectra {
    nfft: usize,
    bins: Vec<Vec<Complex64>>,
}

fn spectra<S: AsRef<[f64]>>(channels: &[S]) -> Result<Spectra> {
    let len = channels.first().map(|c| c.as_ref().len()).unwrap_or(0);
    if channels.iter().any(|c| c.as_ref().len() != len) {
        return Err(Error::Alignment("channels differ in length".into()));
    }
    if len == 0 {
        return Err(Error::DegenerateSignal("empty input"));
    }
    // at least twice the length so circular lags do not alias
    let nfft = (2 * len).next_power_of_two();
    let mut planner = RealFftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(nfft);
    let mut buf = fft.make_input_vec();
    let mut bins = Vec::with_capacity(channels.len());
    for x in channels {
        let x = x.as_ref();
        if x.iter().all(|&v| v == 0.0) {
            return Err(Error::DegenerateSignal("zero-energy channel"));
        }
        buf.iter_mut().for_each(|v| *v = 0.0);
        buf[..len].copy_from_slice(x);
        let mut out = fft.make_output_vec();
        fft.process(&mut buf, &mut out).expect("fft buffer sizes match plan");
        bins.push(out);
    }
    Ok(Spectra { nfft, bins })
}

fn phat_pair(xi: &[Complex64], xj: &[Complex64], nfft: usize, eps: f64) -> CrossCorrelation {
    let mut cross: Vec<Complex64> = xi
        .iter()
        .zip(xj)
        .map(|(a, b)| {
            let c = a.conj() * b;
            c / (c.norm() + eps)
        })
        .collect();
    // the real inverse transform ignores imaginary parts at DC and Nyquist
    let last = cross.len() - 1;
    cross[0].im = 0.0;
    cross[last].im = 0.0;
    let mut planner = RealFftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(nfft);
    let mut out = ifft.make_output_vec();
    ifft.process(&mut cross, &mut out).expect("fft buffer sizes match plan");
    let scale = 1.0 / nfft as f64;
    out.iter_mut().for_each(|v| *v *= scale);
    CrossCorrelation { values: out }
}

/// PHAT-weighted cross-correlation of one pair over the whole signal.
pub fn gcc_phat(xi: &[f64], xj: &[f64], eps: f64) -> Result<CrossCorrelation> {
    if !(eps > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "PHAT epsilon must be positive, got {eps}"
        )));
    }
    let s = spectra(&[xi, xj])?;
    Ok(phat_pair(&s.bins[0], &s.bins[1], s.nfft, eps))
}

/// Per-pair correlation rows restricted to lags `-bins/2 .. bins/2 - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GccFeatures {
    pub pairs: Vec<(usize, usize)>,
    pub lags: Vec<i64>,
    pub values: Vec<Vec<f64>>,
    /// Physically feasible lag radius used by [`estimate_tdoas`].
    pub search_radius: usize,
}

impl GccFeatures {
    pub fn num_bins(&self) -> usize {
        self.lags.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.pairs.len(), self.lags.len())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GccOptions {
    pub bins: usize,
    pub eps: f64,
    /// Average PHAT cross-spectra over `(frame, hop)` frames instead of one
    /// transform of the whole clip.
    pub framed: Option<(usize, usize)>,
}

impl Default for GccOptions {
    fn default() -> Self {
        Self {
            bins: DEFAULT_BINS,
            eps: PHAT_EPS,
            framed: None,
        }
    }
}

pub fn gcc_features<S: AsRef<[f64]>>(x: &[S], g: &ArrayGeometry, bins: usize) -> Result<GccFeatures> {
    gcc_features_with(
        x,
        g,
        &GccOptions {
            bins,
            ..Default::default()
        },
    )
}

pub fn gcc_features_with<S: AsRef<[f64]>>(x: &[S], g: &ArrayGeometry, opts: &GccOptions) -> Result<GccFeatures> {
    if opts.bins == 0 || !opts.bins.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!(
            "bins must be even and positive, got {}",
            opts.bins
        )));
    }
    if x.len() != g.num_mics() {
        return Err(Error::Alignment(format!(
            "{} channels for a {}-mic array",
            x.len(),
            g.num_mics()
        )));
    }
    let corr: Vec<CrossCorrelation> = match opts.framed {
        None => {
            if !(opts.eps > 0.0) {
                return Err(Error::InvalidConfig("PHAT epsilon must be positive".into()));
            }
            let s = spectra(x)?;
            g.pairs()
                .iter()
                .map(|&(i, j)| phat_pair(&s.bins[i], &s.bins[j], s.nfft, opts.eps))
                .collect()
        }
        Some((frame, hop)) => framed_correlations(x, g, frame, hop, opts.eps)?,
    };
    let half = (opts.bins / 2) as i64;
    let lags: Vec<i64> = (-half..half).collect();
    Ok(GccFeatures {
        pairs: g.pairs().to_vec(),
        values: corr.iter().map(|c| lags.iter().map(|&l| c.at(l)).collect()).collect(),
        lags,
        search_radius: g.max_delay_samples().ceil() as usize + 1,
    })
}

fn framed_correlations<S: AsRef<[f64]>>(
    x: &[S],
    g: &ArrayGeometry,
    frame: usize,
    hop: usize,
    eps: f64,
) -> Result<Vec<CrossCorrelation>> {
    let len = x.first().map(|c| c.as_ref().len()).unwrap_or(0);
    if frame == 0 || hop == 0 || len < frame {
        return Err(Error::TooShort { len, frame });
    }
    let starts: Vec<usize> = (0..=len - frame).step_by(hop).collect();
    let mut sums: Vec<Vec<f64>> = Vec::new();
    for &s in &starts {
        let chunk: Vec<&[f64]> = x.iter().map(|c| &c.as_ref()[s..s + frame]).collect();
        // silent frames carry no phase information
        let Ok(sp) = spectra(&chunk) else { continue };
        for (p, &(i, j)) in g.pairs().iter().enumerate() {
            let c = phat_pair(&sp.bins[i], &sp.bins[j], sp.nfft, eps);
            if sums.len() <= p {
                sums.push(vec![0.0; c.len()]);
            }
            sums[p].iter_mut().zip(c.values()).for_each(|(a, b)| *a += b);
        }
    }
    if sums.is_empty() {
        return Err(Error::DegenerateSignal("every frame is silent"));
    }
    let count = starts.len() as f64;
    Ok(sums
        .into_iter()
        .map(|v| CrossCorrelation {
            values: v.into_iter().map(|a| a / count).collect(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TdoaSet {
    pub pairs: Vec<(usize, usize)>,
    /// Delay of mic j relative to mic i, in samples.
    pub delays: Vec<f64>,
    /// Correlation value at the integer peak.
    pub confidence: Vec<f64>,
}

/// Per-pair peak within the feasible lag range, refined with a parabola
/// through the peak and its two neighbours.
pub fn estimate_tdoas(f: &GccFeatures) -> TdoaSet {
    let half = (f.num_bins() / 2) as i64;
    let r = (f.search_radius as i64).min(half - 1).max(0);
    let mut delays = Vec::with_capacity(f.pairs.len());
    let mut confidence = Vec::with_capacity(f.pairs.len());
    for row in &f.values {
        let at = |lag: i64| row[(lag + half) as usize];
        let peak = best_lag((-r..=r).map(|l| (l, at(l))));
        let y0 = at(peak);
        let mut delta = 0.0;
        if peak > -half && peak + 1 < half {
            let (ym, yp) = (at(peak - 1), at(peak + 1));
            let denom = ym - 2.0 * y0 + yp;
            if denom < 0.0 {
                delta = (0.5 * (ym - yp) / denom).clamp(-0.5, 0.5);
            }
        }
        delays.push(peak as f64 + delta);
        confidence.push(y0);
    }
    TdoaSet {
        pairs: f.pairs.clone(),
        delays,
        confidence,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DoaEstimate {
    pub direction: Direction,
    /// RMS misfit of the far-field model, in samples; infinite when degenerate.
    pub residual: f64,
    /// The least-squares direction vector vanished, so `direction` is arbitrary.
    pub degenerate: bool,
}

/// Solves `tau_ij = (r_i - r_j) . u * fs / c` for `u` over all pairs.
pub fn doa_least_squares(t: &TdoaSet, g: &ArrayGeometry) -> Result<DoaEstimate> {
    let mics = g.mic_positions();
    let k = g.sample_rate() as f64 / g.speed_of_sound();
    if t.pairs.len() != t.delays.len() {
        return Err(Error::Alignment("pairs and delays differ in length".into()));
    }
    let n = t.pairs.len();
    let mut a = DMatrix::<f64>::zeros(n, 3);
    for (row, &(i, j)) in t.pairs.iter().enumerate() {
        if i >= mics.len() || j >= mics.len() {
            return Err(Error::Alignment(format!("pair ({i}, {j}) outside the array")));
        }
        let b = geometry::sub(mics[i], mics[j]);
        for c in 0..3 {
            a[(row, c)] = b[c] * k;
        }
    }
    let b = DVector::from_column_slice(&t.delays);
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|&&s| s > 1e-9 * smax).count();
    if rank < 3 {
        return Err(Error::SingularGeometry(rank));
    }
    let u = svd.solve(&b, 1e-12 * smax).expect("svd computed with u and v");
    let u = Vector3::new(u[0], u[1], u[2]);
    let norm = u.norm();
    let Some(direction) = (norm > 1e-12)
        .then(|| Direction::from_vector([u.x, u.y, u.z]))
        .flatten()
    else {
        return Ok(DoaEstimate {
            direction: Direction::new(0.0, 0.0),
            residual: f64::INFINITY,
            degenerate: true,
        });
    };
    // misfit of the unit-norm direction, which is what the model predicts
    let unit = DVector::from_column_slice(&[u.x / norm, u.y / norm, u.z / norm]);
    let misfit = &a * unit - b;
    Ok(DoaEstimate {
        direction,
        residual: (misfit.norm_squared() / n as f64).sqrt(),
        degenerate: false,
    })
}
