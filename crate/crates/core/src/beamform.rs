//! Far-field delay-and-sum and MVDR beamformers.
//!
//! Steering is referenced to mic 0 rather than the array centroid: the
//! target component of the output stays time-aligned with the reference
//! channel, which is what the metrics compare against. A centroid reference
//! would add a sub-sample to ~2 sample lag that depends on the direction and
//! is unrelated to beamforming quality.

use log::warn;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::dsp::{self, fractional_delay, ComplexSpectrogram, StftConfig};
use crate::error::{Error, Result};
use crate::geometry::{ArrayGeometry, Direction};

/// Default diagonal loading, as a fraction of the average diagonal power.
pub const DEFAULT_LOADING: f64 = 1e-3;
/// Loading used when fewer frames than mics are available.
pub const SHORT_LOADING: f64 = 1e-1;
pub const REFERENCE_MIC: usize = 0;

/// Arrival delay of every mic relative to mic 0, in samples.
pub fn relative_delays(g: &ArrayGeometry, d: Direction) -> Vec<f64> {
    let delays = g.farfield_delays(d);
    delays.iter().map(|t| t - delays[REFERENCE_MIC]).collect()
}

/// Advances every channel by its relative delay and averages with weights
/// `1/M`. The output has the input length.
pub fn das<S: AsRef<[f64]>>(x: &[S], g: &ArrayGeometry, d: Direction) -> Result<Vec<f64>> {
    check_channels(x, g)?;
    let delays = relative_delays(g, d);
    let len = x[0].as_ref().len();
    let mut out = vec![0.0; len];
    let w = 1.0 / x.len() as f64;
    for (ch, tau) in x.iter().zip(&delays) {
        let aligned = fractional_delay(ch.as_ref(), -tau);
        out.iter_mut().zip(&aligned).for_each(|(o, a)| *o += w * a);
    }
    Ok(out)
}

fn check_channels<S: AsRef<[f64]>>(x: &[S], g: &ArrayGeometry) -> Result<()> {
    if x.len() != g.num_mics() {
        return Err(Error::Alignment(format!(
            "{} channels for a {}-mic array",
            x.len(),
            g.num_mics()
        )));
    }
    if x.iter().any(|c| c.as_ref().len() != x[0].as_ref().len()) {
        return Err(Error::Alignment("channels differ in length".into()));
    }
    Ok(())
}

/// `d_m(f) = exp(-j 2 pi f tau_m)` per STFT bin, `tau_m` relative to mic 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVector {
    mics: usize,
    values: Vec<Complex64>,
}

impl SteeringVector {
    pub fn new(g: &ArrayGeometry, d: Direction, cfg: &StftConfig) -> Self {
        let fs = g.sample_rate() as f64;
        let delays = relative_delays(g, d);
        let values = (0..cfg.num_bins())
            .flat_map(|k| {
                let f = cfg.bin_frequency(k);
                delays
                    .iter()
                    .map(move |tau| Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * f * tau / fs))
            })
            .collect();
        Self {
            mics: g.num_mics(),
            values,
        }
    }

    pub fn num_mics(&self) -> usize {
        self.mics
    }

    pub fn num_bins(&self) -> usize {
        self.values.len() / self.mics
    }

    pub fn at(&self, bin: usize) -> &[Complex64] {
        &self.values[bin * self.mics..(bin + 1) * self.mics]
    }

    fn vector(&self, bin: usize) -> DVector<Complex64> {
        DVector::from_column_slice(self.at(bin))
    }
}

/// Per-bin `M × M` spatial covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialCovariance {
    matrices: Vec<DMatrix<Complex64>>,
    pub frames: usize,
    pub loading: f64,
}

impl SpatialCovariance {
    pub fn from_matrices(matrices: Vec<DMatrix<Complex64>>, frames: usize, loading: f64) -> Self {
        Self {
            matrices,
            frames,
            loading,
        }
    }

    pub fn num_bins(&self) -> usize {
        self.matrices.len()
    }

    pub fn matrix(&self, bin: usize) -> &DMatrix<Complex64> {
        &self.matrices[bin]
    }

    /// Ratio of largest to smallest eigenvalue per bin.
    pub fn condition_numbers(&self) -> Vec<f64> {
        self.matrices
            .iter()
            .map(|r| {
                let ev = r.clone().symmetric_eigen().eigenvalues;
                let max = ev.iter().cloned().fold(f64::MIN, f64::max);
                let min = ev.iter().cloned().fold(f64::MAX, f64::min);
                if min > 0.0 {
                    max / min
                } else {
                    f64::INFINITY
                }
            })
            .collect()
    }
}

/// `R(f) = (1/T) sum_t X X^H + loading * tr(R)/M * I`.
///
/// With fewer frames than mics the estimate is rank deficient; a warning is
/// logged and the loading is raised to [`SHORT_LOADING`]. Bins with zero
/// power get an identity so MVDR falls back to delay-and-sum there.
pub fn estimate_covariance(s: &ComplexSpectrogram, loading: f64) -> SpatialCovariance {
    let m = s.channels();
    let t = s.frames();
    let loading = if t < m {
        warn!("covariance from {t} frames for {m} mics is ill-conditioned; loading raised to {SHORT_LOADING}");
        loading.max(SHORT_LOADING)
    } else {
        loading
    };
    let matrices = (0..s.bins())
        .map(|f| {
            let mut r = DMatrix::<Complex64>::zeros(m, m);
            for frame in 0..t {
                for i in 0..m {
                    let xi = s.get(i, f, frame);
                    for j in i..m {
                        r[(i, j)] += xi * s.get(j, f, frame).conj();
                    }
                }
            }
            let norm = 1.0 / t.max(1) as f64;
            for i in 0..m {
                for j in i..m {
                    r[(i, j)] *= norm;
                    r[(j, i)] = r[(i, j)].conj();
                }
                // the diagonal is real by construction; drop rounding residue
                r[(i, i)].im = 0.0;
            }
            let trace: f64 = (0..m).map(|i| r[(i, i)].re).sum();
            let add = if trace > 0.0 { loading * trace / m as f64 } else { 1.0 };
            for i in 0..m {
                r[(i, i)].re += add;
            }
            r
        })
        .collect();
    SpatialCovariance {
        matrices,
        frames: t,
        loading,
    }
}

/// `w(f) = R^-1 d / (d^H R^-1 d)` for every bin.
pub fn mvdr_weights(d: &SteeringVector, r: &SpatialCovariance) -> Result<Vec<DVector<Complex64>>> {
    if d.num_bins() != r.num_bins() {
        return Err(Error::Alignment(format!(
            "steering vector has {} bins, covariance {}",
            d.num_bins(),
            r.num_bins()
        )));
    }
    (0..d.num_bins())
        .map(|bin| {
            let dv = d.vector(bin);
            let chol = r.matrix(bin).clone().cholesky().ok_or(Error::Solver { bin })?;
            // complex square roots never fail, so indefiniteness shows up as a
            // non-real or non-positive diagonal in the factor
            if !chol
                .l_dirty()
                .diagonal()
                .iter()
                .all(|v| v.re > 0.0 && v.im.abs() <= 1e-12 * v.re)
            {
                return Err(Error::Solver { bin });
            }
            let rinv_d = chol.solve(&dv);
            let denom = dv.dotc(&rinv_d);
            if !(denom.norm() > 0.0) || !denom.re.is_finite() {
                return Err(Error::Solver { bin });
            }
            Ok(rinv_d / denom)
        })
        .collect()
}

/// Applies `Y(f,t) = w(f)^H X(f,t)` and synthesizes the output.
pub fn mvdr(s: &ComplexSpectrogram, d: &SteeringVector, r: &SpatialCovariance) -> Result<Vec<f64>> {
    let spec = mvdr_spectrogram(s, d, r)?;
    dsp::istft_channel(&spec, 0, s.signal_len())
}

pub fn mvdr_spectrogram(
    s: &ComplexSpectrogram,
    d: &SteeringVector,
    r: &SpatialCovariance,
) -> Result<ComplexSpectrogram> {
    if s.channels() != d.num_mics() || s.bins() != d.num_bins() {
        return Err(Error::Alignment(
            "spectrogram does not match the steering vector".into(),
        ));
    }
    let w = mvdr_weights(d, r)?;
    let mut out = ComplexSpectrogram::zeros(1, s.frames(), s.signal_len(), *s.config());
    for t in 0..s.frames() {
        for (f, wf) in w.iter().enumerate() {
            let y: Complex64 = (0..s.channels()).map(|m| wf[m].conj() * s.get(m, f, t)).sum();
            out.set(0, f, t, y);
        }
    }
    Ok(out)
}

/// MVDR with the covariance estimated from `covariance_source` (the
/// mixture itself in the benchmark, the interference alone in the oracle
/// diagnostic mode).
pub fn mvdr_beamform<S: AsRef<[f64]>, T: AsRef<[f64]>>(
    x: &[S],
    covariance_source: &[T],
    g: &ArrayGeometry,
    dir: Direction,
    cfg: &StftConfig,
    loading: f64,
) -> Result<Vec<f64>> {
    check_channels(x, g)?;
    let spec = dsp::stft_multi(x, cfg)?;
    let cov_spec = dsp::stft_multi(covariance_source, cfg)?;
    let r = estimate_covariance(&cov_spec, loading);
    mvdr(&spec, &SteeringVector::new(g, dir, cfg), &r)
}
