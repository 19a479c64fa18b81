//! SI-SDR, single-reference BSS-eval SDR/SAR, STOI and SNR-stratified
//! aggregation.

use log::warn;
use nalgebra::{DMatrix, DVector};
use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::roomsim::fft_convolve;

/// Scores are clamped to `±METRIC_CAP` dB so that aggregates stay finite
/// (a zero residual reaches the upper cap, a zero projection the lower one).
pub const METRIC_CAP: f64 = 100.0;
pub const BSS_FILTER_TAPS: usize = 512;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn ratio_db(signal: f64, residual: f64) -> f64 {
    if signal == 0.0 {
        return -METRIC_CAP;
    }
    if residual == 0.0 {
        return METRIC_CAP;
    }
    (10.0 * (signal / residual).log10()).clamp(-METRIC_CAP, METRIC_CAP)
}

fn check_pair(reference: &[f64], estimate: &[f64]) -> Result<()> {
    if reference.len() != estimate.len() {
        return Err(Error::Alignment(format!(
            "reference has {} samples, estimate {}",
            reference.len(),
            estimate.len()
        )));
    }
    if !reference.iter().any(|&v| v != 0.0) {
        return Err(Error::UndefinedMetric("reference has zero energy"));
    }
    Ok(())
}

/// `10 log10(|a s|^2 / |a s - s_hat|^2)` with `a = <s_hat, s> / |s|^2`.
pub fn si_sdr(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    check_pair(reference, estimate)?;
    let alpha = dot(estimate, reference) / dot(reference, reference);
    let (mut target, mut residual) = (0.0, 0.0);
    for (s, e) in reference.iter().zip(estimate) {
        let t = alpha * s;
        target += t * t;
        residual += (t - e) * (t - e);
    }
    Ok(ratio_db(target, residual))
}

/// Improvement of `estimate` over `mixture`, both scored against `reference`.
pub fn si_sdri(reference: &[f64], estimate: &[f64], mixture: &[f64]) -> Result<f64> {
    Ok(si_sdr(reference, estimate)? - si_sdr(reference, mixture)?)
}

/// SDR and SAR of `estimate` against a single reference.
///
/// The target component is the least-squares projection of the estimate
/// onto the reference filtered by any `filter_taps`-tap FIR filter. With one
/// reference there is no interference subspace, so SDR and SAR coincide.
pub fn bss_eval_single(reference: &[f64], estimate: &[f64], filter_taps: usize) -> Result<(f64, f64)> {
    check_pair(reference, estimate)?;
    if filter_taps == 0 {
        return Err(Error::InvalidConfig("filter_taps must be at least 1".into()));
    }
    let len = reference.len();
    let taps = filter_taps.min(len);
    let (auto, cross) = correlations(reference, estimate, taps);
    let gram = DMatrix::from_fn(taps, taps, |i, j| auto[i.abs_diff(j)]);
    let rhs = DVector::from_column_slice(&cross);
    let coeffs = solve_normal_equations(gram, &rhs);
    let target = fft_convolve(reference, coeffs.as_slice());
    let (mut t_energy, mut e_energy) = (0.0, 0.0);
    for (n, t) in target.iter().enumerate() {
        let e = estimate.get(n).copied().unwrap_or(0.0) - t;
        t_energy += t * t;
        e_energy += e * e;
    }
    let sdr = ratio_db(t_energy, e_energy);
    Ok((sdr, sdr))
}

/// Autocorrelation of `r` and cross-correlation `sum_n e(n) r(n - k)` for
/// lags `0..taps`.
fn correlations(r: &[f64], e: &[f64], taps: usize) -> (Vec<f64>, Vec<f64>) {
    let nfft = (r.len() + taps).next_power_of_two();
    let mut planner = RealFftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(nfft);
    let inv = planner.plan_fft_inverse(nfft);
    let spectrum = |x: &[f64]| {
        let mut buf = fwd.make_input_vec();
        buf[..x.len()].copy_from_slice(x);
        let mut out = fwd.make_output_vec();
        fwd.process(&mut buf, &mut out).expect("fft buffer sizes match plan");
        out
    };
    let rs = spectrum(r);
    let es = spectrum(e);
    let back = |mut s: Vec<num_complex::Complex64>| {
        let last = s.len() - 1;
        s[0].im = 0.0;
        s[last].im = 0.0;
        let mut out = inv.make_output_vec();
        inv.process(&mut s, &mut out).expect("fft buffer sizes match plan");
        out.truncate(taps);
        out.iter_mut().for_each(|v| *v /= nfft as f64);
        out
    };
    let auto = back(rs.iter().map(|a| a * a.conj()).collect());
    let cross = back(es.iter().zip(&rs).map(|(a, b)| a * b.conj()).collect());
    (auto, cross)
}

fn solve_normal_equations(gram: DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    if let Some(c) = gram.clone().cholesky() {
        return c.solve(rhs);
    }
    let scale = gram[(0, 0)].abs().max(f64::MIN_POSITIVE);
    let mut reg = 1e-10;
    loop {
        warn!("singular normal equations in the distortion projection; regularizing with {reg:e}");
        let m = &gram + DMatrix::identity(gram.nrows(), gram.ncols()) * (reg * scale);
        if let Some(c) = m.cholesky() {
            return c.solve(rhs);
        }
        reg *= 100.0;
    }
}

const STOI_FS: u32 = 10_000;
const STOI_FRAME: usize = 256;
const STOI_NFFT: usize = 512;
const STOI_BANDS: usize = 15;
const STOI_MIN_FREQ: f64 = 150.0;
const STOI_SEGMENT: usize = 30;
const STOI_BETA_DB: f64 = -15.0;
const STOI_DYN_RANGE: f64 = 40.0;

/// Short-time objective intelligibility (the original, non-extended
/// measure) of `estimate` given the clean `reference`.
pub fn stoi(reference: &[f64], estimate: &[f64], sample_rate: u32) -> Result<f64> {
    check_pair(reference, estimate)?;
    let (x, y) = if sample_rate == STOI_FS {
        (reference.to_vec(), estimate.to_vec())
    } else {
        (
            resample(reference, sample_rate, STOI_FS),
            resample(estimate, sample_rate, STOI_FS),
        )
    };
    let (x, y) = remove_silent_frames(&x, &y);
    let xs = stoi_spectrogram(&x);
    let ys = stoi_spectrogram(&y);
    if xs.len() < STOI_SEGMENT {
        return Err(Error::UndefinedMetric("too little active speech for one STOI segment"));
    }
    let bands = third_octave_bands();
    let x_tob = band_envelopes(&xs, &bands);
    let y_tob = band_envelopes(&ys, &bands);
    let frames = xs.len();
    let clip = 10f64.powf(-STOI_BETA_DB / 20.0);
    let eps = f64::EPSILON;
    let mut total = 0.0;
    let mut count = 0usize;
    for m in STOI_SEGMENT..=frames {
        for j in 0..STOI_BANDS {
            let xseg = &x_tob[j][m - STOI_SEGMENT..m];
            let yseg = &y_tob[j][m - STOI_SEGMENT..m];
            let norm = dot(xseg, xseg).sqrt() / (dot(yseg, yseg).sqrt() + eps);
            let yp: Vec<f64> = yseg
                .iter()
                .zip(xseg)
                .map(|(yv, xv)| (yv * norm).min(xv * (1.0 + clip)))
                .collect();
            total += centered_correlation(xseg, &yp, eps);
        }
        count += STOI_BANDS;
    }
    Ok(total / count as f64)
}

fn centered_correlation(a: &[f64], b: &[f64], eps: f64) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let a: Vec<f64> = a.iter().map(|v| v - ma).collect();
    let b: Vec<f64> = b.iter().map(|v| v - mb).collect();
    let na = dot(&a, &a).sqrt() + eps;
    let nb = dot(&b, &b).sqrt() + eps;
    a.iter().zip(&b).map(|(x, y)| (x / na) * (y / nb)).sum()
}

/// Hann window without its zero end points.
fn stoi_window(n: usize) -> Vec<f64> {
    (1..=n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n + 1) as f64).cos())
        .collect()
}

/// Drops frames more than 40 dB below the loudest reference frame and
/// overlap-adds the rest back together.
fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let hop = STOI_FRAME / 2;
    let w = stoi_window(STOI_FRAME);
    let starts: Vec<usize> = (0..x.len().saturating_sub(STOI_FRAME)).step_by(hop).collect();
    let frame = |s: &[f64], i: usize| -> Vec<f64> { w.iter().zip(&s[i..i + STOI_FRAME]).map(|(a, b)| a * b).collect() };
    let energies: Vec<f64> = starts
        .iter()
        .map(|&i| 20.0 * (dot(&frame(x, i), &frame(x, i)).sqrt() + f64::EPSILON).log10())
        .collect();
    let max = energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let kept: Vec<usize> = starts
        .iter()
        .zip(&energies)
        .filter(|(_, &e)| max - STOI_DYN_RANGE - e < 0.0)
        .map(|(&i, _)| i)
        .collect();
    let out_len = if kept.is_empty() {
        0
    } else {
        (kept.len() - 1) * hop + STOI_FRAME
    };
    let mut xo = vec![0.0; out_len];
    let mut yo = vec![0.0; out_len];
    for (k, &i) in kept.iter().enumerate() {
        let (fx, fy) = (frame(x, i), frame(y, i));
        for n in 0..STOI_FRAME {
            xo[k * hop + n] += fx[n];
            yo[k * hop + n] += fy[n];
        }
    }
    (xo, yo)
}

/// Power spectra of 256-sample Hann frames, hop 128, zero-padded to 512.
fn stoi_spectrogram(x: &[f64]) -> Vec<Vec<f64>> {
    let hop = STOI_FRAME / 2;
    let w = stoi_window(STOI_FRAME);
    let mut planner = RealFftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(STOI_NFFT);
    let mut buf = fft.make_input_vec();
    let mut out = fft.make_output_vec();
    (0..x.len().saturating_sub(STOI_FRAME))
        .step_by(hop)
        .map(|i| {
            buf.iter_mut().for_each(|v| *v = 0.0);
            for n in 0..STOI_FRAME {
                buf[n] = w[n] * x[i + n];
            }
            fft.process(&mut buf, &mut out).expect("fft buffer sizes match plan");
            out.iter().map(|c| c.norm_sqr()).collect()
        })
        .collect()
}

/// FFT-bin ranges of the 15 one-third-octave bands starting at 150 Hz, with
/// edges snapped to the nearest bin.
fn third_octave_bands() -> Vec<(usize, usize)> {
    let df = STOI_FS as f64 / STOI_NFFT as f64;
    let nearest = |f: f64| -> usize {
        let k = (f / df).round() as usize;
        k.min(STOI_NFFT / 2)
    };
    (0..STOI_BANDS)
        .map(|k| {
            let k = k as f64;
            let lo = STOI_MIN_FREQ * 2f64.powf((2.0 * k - 1.0) / 6.0);
            let hi = STOI_MIN_FREQ * 2f64.powf((2.0 * k + 1.0) / 6.0);
            (nearest(lo), nearest(hi))
        })
        .collect()
}

fn band_envelopes(spec: &[Vec<f64>], bands: &[(usize, usize)]) -> Vec<Vec<f64>> {
    bands
        .iter()
        .map(|&(lo, hi)| spec.iter().map(|p| p[lo..hi].iter().sum::<f64>().sqrt()).collect())
        .collect()
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..50 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

/// Rational-rate resampling with a Kaiser-windowed sinc, one precomputed
/// filter per output phase.
pub fn resample(x: &[f64], from: u32, to: u32) -> Vec<f64> {
    if from == to || x.is_empty() {
        return x.to_vec();
    }
    let g = gcd(from, to);
    let (up, down) = ((to / g) as usize, (from / g) as usize);
    let ratio = (up as f64 / down as f64).min(1.0);
    // cutoff at the lower Nyquist rate, in cycles per input sample
    let fc = 0.5 * ratio;
    let half = (16.0 / ratio).ceil() as i64;
    let beta = 5.0;
    let i0b = bessel_i0(beta);
    let kernel = |t: f64| -> f64 {
        let r = t / (half as f64 + 1.0);
        if r.abs() >= 1.0 {
            return 0.0;
        }
        let sinc = if t == 0.0 {
            1.0
        } else {
            (std::f64::consts::PI * 2.0 * fc * t).sin() / (std::f64::consts::PI * 2.0 * fc * t)
        };
        2.0 * fc * sinc * bessel_i0(beta * (1.0 - r * r).sqrt()) / i0b
    };
    // output n sits at input time n * down / up = base + phase / up
    let phases: Vec<Vec<f64>> = (0..up)
        .map(|p| {
            let frac = p as f64 / up as f64;
            let taps: Vec<f64> = (-half + 1..=half).map(|k| kernel(frac - k as f64)).collect();
            // unit DC gain in every phase
            let sum: f64 = taps.iter().sum();
            taps.iter().map(|t| t / sum).collect()
        })
        .collect();
    let out_len = (x.len() * up).div_ceil(down);
    (0..out_len)
        .map(|n| {
            let pos = n * down;
            let base = (pos / up) as i64;
            let taps = &phases[pos % up];
            let mut acc = 0.0;
            for (i, w) in taps.iter().enumerate() {
                let k = base - half + 1 + i as i64;
                if k >= 0 && (k as usize) < x.len() {
                    acc += w * x[k as usize];
                }
            }
            acc
        })
        .collect()
}

/// Half-open SNR strata `[-1,1) [1,3) [3,5) [5,7)` and closed `[7,10]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SnrBin {
    #[serde(rename = "[-1,1)")]
    M1To1,
    #[serde(rename = "[1,3)")]
    From1To3,
    #[serde(rename = "[3,5)")]
    From3To5,
    #[serde(rename = "[5,7)")]
    From5To7,
    #[serde(rename = "[7,10]")]
    From7To10,
}

impl SnrBin {
    pub const ALL: [SnrBin; 5] = [
        SnrBin::M1To1,
        SnrBin::From1To3,
        SnrBin::From3To5,
        SnrBin::From5To7,
        SnrBin::From7To10,
    ];

    pub fn of(snr_db: f64) -> Result<SnrBin> {
        if !(-1.0..=10.0).contains(&snr_db) {
            return Err(Error::SnrOutOfRange(snr_db));
        }
        Ok(if snr_db < 1.0 {
            SnrBin::M1To1
        } else if snr_db < 3.0 {
            SnrBin::From1To3
        } else if snr_db < 5.0 {
            SnrBin::From3To5
        } else if snr_db < 7.0 {
            SnrBin::From5To7
        } else {
            SnrBin::From7To10
        })
    }

    pub fn label(&self) -> &'static str {
        match self {
            SnrBin::M1To1 => "[-1,1)",
            SnrBin::From1To3 => "[1,3)",
            SnrBin::From3To5 => "[3,5)",
            SnrBin::From5To7 => "[5,7)",
            SnrBin::From7To10 => "[7,10]",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub si_sdr: f64,
    pub si_sdri: f64,
    pub sdr: f64,
    pub sar: f64,
    pub stoi: f64,
    pub snr_db: f64,
    /// `None` when the scene SNR lies outside the stratified range.
    pub snr_bin: Option<SnrBin>,
}

/// Scores `estimate` and the unprocessed `mixture` reference channel
/// against `reference`.
pub fn evaluate(
    reference: &[f64],
    estimate: &[f64],
    mixture: &[f64],
    snr_db: f64,
    sample_rate: u32,
) -> Result<MetricsReport> {
    let si = si_sdr(reference, estimate)?;
    let base = si_sdr(reference, mixture)?;
    let (sdr, sar) = bss_eval_single(reference, estimate, BSS_FILTER_TAPS)?;
    Ok(MetricsReport {
        si_sdr: si,
        si_sdri: si - base,
        sdr,
        sar,
        stoi: stoi(reference, estimate, sample_rate)?,
        snr_db,
        snr_bin: SnrBin::of(snr_db).ok(),
    })
}

/// Mean and population standard deviation; `None` for an empty set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

impl Stat {
    pub fn of(values: &[f64]) -> Stat {
        if values.is_empty() {
            return Stat { mean: None, std: None };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Stat {
            mean: Some(mean),
            std: Some(var.sqrt()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub count: usize,
    pub si_sdr: Stat,
    pub si_sdri: Stat,
    pub sdr: Stat,
    pub sar: Stat,
    pub stoi: Stat,
}

impl GroupSummary {
    pub fn of(reports: &[&MetricsReport]) -> Self {
        let col = |f: fn(&MetricsReport) -> f64| Stat::of(&reports.iter().map(|r| f(r)).collect::<Vec<_>>());
        Self {
            count: reports.len(),
            si_sdr: col(|r| r.si_sdr),
            si_sdri: col(|r| r.si_sdri),
            sdr: col(|r| r.sdr),
            sar: col(|r| r.sar),
            stoi: col(|r| r.stoi),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSummary {
    pub bin: SnrBin,
    #[serde(flatten)]
    pub summary: GroupSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratifiedSummary {
    pub overall: GroupSummary,
    /// All five strata in order, including empty ones.
    pub bins: Vec<BinSummary>,
}

/// Groups `reports` by the stratum of the matching entry of `snr_db`.
pub fn stratify(reports: &[MetricsReport], snr_db: &[f64]) -> Result<StratifiedSummary> {
    if reports.len() != snr_db.len() {
        return Err(Error::Alignment(format!(
            "{} reports for {} SNR values",
            reports.len(),
            snr_db.len()
        )));
    }
    let bins = snr_db.iter().map(|&s| SnrBin::of(s)).collect::<Result<Vec<_>>>()?;
    Ok(StratifiedSummary {
        overall: GroupSummary::of(&reports.iter().collect::<Vec<_>>()),
        bins: SnrBin::ALL
            .iter()
            .map(|&b| BinSummary {
                bin: b,
                summary: GroupSummary::of(
                    &reports
                        .iter()
                        .zip(&bins)
                        .filter(|(_, &rb)| rb == b)
                        .map(|(r, _)| r)
                        .collect::<Vec<_>>(),
                ),
            })
            .collect(),
    })
}
