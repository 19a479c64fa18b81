//! STFT analysis/synthesis, the stacked real/imaginary input tensor and
//! FFT-based fractional delay.
//!
//! Synthesis uses weighted overlap-add: each frame is multiplied by the
//! analysis window again and the sum is divided by the running sum of squared
//! windows. This reconstructs exactly for any hop up to half the FFT size,
//! including the 160-sample hop, where the plain Hann window is not COLA.

use std::f64::consts::PI;

use num_complex::Complex64;
use realfft::RealFftPlanner;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StftConfig {
    pub fft_size: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

impl Default for StftConfig {
    /// 512-point FFT and Hann window, 10 ms hop at 16 kHz.
    fn default() -> Self {
        Self {
            fft_size: 512,
            hop: 160,
            sample_rate: 16_000,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fft_size < 4 || !self.fft_size.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "fft size {} must be even and at least 4",
                self.fft_size
            )));
        }
        if self.hop == 0 || self.hop > self.fft_size / 2 {
            return Err(Error::InvalidConfig(format!(
                "hop {} must be in 1..={}",
                self.hop,
                self.fft_size / 2
            )));
        }
        Ok(())
    }

    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Periodic Hann window of length `fft_size`.
    pub fn window(&self) -> Vec<f64> {
        hann_periodic(self.fft_size)
    }

    pub fn num_frames(&self, signal_len: usize) -> usize {
        signal_len / self.hop + 1
    }

    fn padded_len(&self, signal_len: usize) -> usize {
        (self.num_frames(signal_len) - 1) * self.hop + self.fft_size
    }

    /// Frequency in Hz of bin `k`.
    pub fn bin_frequency(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate as f64 / self.fft_size as f64
    }

    /// Sum of squared analysis windows seen by each input sample. This is
    /// the weight with which each sample's energy enters the spectrogram.
    pub fn squared_window_envelope(&self, signal_len: usize) -> Vec<f64> {
        let w = self.window();
        let half = self.fft_size / 2;
        let mut env = vec![0.0; self.padded_len(signal_len)];
        for t in 0..self.num_frames(signal_len) {
            for (n, wn) in w.iter().enumerate() {
                env[t * self.hop + n] += wn * wn;
            }
        }
        env[half..half + signal_len].to_vec()
    }
}

pub fn hann_periodic(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Multichannel one-sided STFT. Stored frame-major per channel:
/// `data[(ch * frames + t) * bins + f]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    channels: usize,
    bins: usize,
    frames: usize,
    signal_len: usize,
    config: StftConfig,
    data: Vec<Complex64>,
}

impl ComplexSpectrogram {
    pub fn zeros(channels: usize, frames: usize, signal_len: usize, config: StftConfig) -> Self {
        let bins = config.num_bins();
        Self {
            channels,
            bins,
            frames,
            signal_len,
            config,
            data: vec![Complex64::new(0.0, 0.0); channels * frames * bins],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn bins(&self) -> usize {
        self.bins
    }
    pub fn frames(&self) -> usize {
        self.frames
    }
    pub fn signal_len(&self) -> usize {
        self.signal_len
    }
    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.bins, self.frames)
    }

    #[inline]
    fn idx(&self, ch: usize, bin: usize, frame: usize) -> usize {
        (ch * self.frames + frame) * self.bins + bin
    }

    #[inline]
    pub fn get(&self, ch: usize, bin: usize, frame: usize) -> Complex64 {
        self.data[self.idx(ch, bin, frame)]
    }

    #[inline]
    pub fn set(&mut self, ch: usize, bin: usize, frame: usize, v: Complex64) {
        let i = self.idx(ch, bin, frame);
        self.data[i] = v;
    }

    /// All bins of one frame of one channel.
    pub fn frame(&self, ch: usize, frame: usize) -> &[Complex64] {
        let i = self.idx(ch, 0, frame);
        &self.data[i..i + self.bins]
    }

    pub fn frame_mut(&mut self, ch: usize, frame: usize) -> &mut [Complex64] {
        let i = self.idx(ch, 0, frame);
        &mut self.data[i..i + self.bins]
    }

    /// Single-channel spectrogram holding channel `ch`.
    pub fn channel(&self, ch: usize) -> ComplexSpectrogram {
        let n = self.frames * self.bins;
        ComplexSpectrogram {
            channels: 1,
            bins: self.bins,
            frames: self.frames,
            signal_len: self.signal_len,
            config: self.config,
            data: self.data[ch * n..(ch + 1) * n].to_vec(),
        }
    }

    pub fn same_shape(&self, other: &ComplexSpectrogram) -> bool {
        self.shape() == other.shape()
    }

    /// Values in channels × bins × frames order.
    pub fn to_cbt(&self) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(self.data.len());
        for ch in 0..self.channels {
            for f in 0..self.bins {
                for t in 0..self.frames {
                    out.push(self.get(ch, f, t));
                }
            }
        }
        out
    }

    /// Window-weighted energy `Σ c_f |X|² / N`, with `c_f = 2` for bins that
    /// stand for a conjugate pair. Equals `Σ_n x[n]² env[n]` where `env` is
    /// [`StftConfig::squared_window_envelope`].
    pub fn energy(&self) -> f64 {
        let n = self.config.fft_size as f64;
        let last = self.bins - 1;
        let mut e = 0.0;
        for ch in 0..self.channels {
            for t in 0..self.frames {
                for (f, v) in self.frame(ch, t).iter().enumerate() {
                    let c = if f == 0 || f == last { 1.0 } else { 2.0 };
                    e += c * v.norm_sqr();
                }
            }
        }
        e / n
    }
}

pub fn stft(x: &[f64], cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    stft_multi(&[x], cfg)
}

/// STFT of every channel; all channels must share a length.
pub fn stft_multi<S: AsRef<[f64]>>(channels: &[S], cfg: &StftConfig) -> Result<ComplexSpectrogram> {
    cfg.validate()?;
    let len = channels.first().map(|c| c.as_ref().len()).unwrap_or(0);
    if channels.iter().any(|c| c.as_ref().len() != len) {
        return Err(Error::Alignment("channels differ in length".into()));
    }
    if len < cfg.fft_size {
        return Err(Error::TooShort {
            len,
            frame: cfg.fft_size,
        });
    }
    let n = cfg.fft_size;
    let half = n / 2;
    let frames = cfg.num_frames(len);
    let padded_len = cfg.padded_len(len);
    let window = cfg.window();
    let mut planner = RealFftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n);
    let mut input = fft.make_input_vec();
    let mut scratch = fft.make_scratch_vec();
    let mut spec = ComplexSpectrogram::zeros(channels.len(), frames, len, *cfg);

    let mut padded = vec![0.0; padded_len];
    for (ch, x) in channels.iter().enumerate() {
        let x = x.as_ref();
        padded.iter_mut().for_each(|v| *v = 0.0);
        padded[half..half + len].copy_from_slice(x);
        for t in 0..frames {
            let start = t * cfg.hop;
            for (i, v) in input.iter_mut().enumerate() {
                *v = padded[start + i] * window[i];
            }
            fft.process_with_scratch(&mut input, spec.frame_mut(ch, t), &mut scratch)
                .expect("fft buffer sizes match plan");
        }
    }
    Ok(spec)
}

/// Inverse STFT of channel `ch`, trimmed to `length` samples.
pub fn istft_channel(spec: &ComplexSpectrogram, ch: usize, length: usize) -> Result<Vec<f64>> {
    let cfg = spec.config;
    cfg.validate()?;
    let n = cfg.fft_size;
    let half = n / 2;
    let window = cfg.window();
    let out_len = (spec.frames - 1) * cfg.hop + n;
    let mut acc = vec![0.0; out_len];
    let mut norm = vec![0.0; out_len];

    let mut planner = RealFftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(n);
    let mut buf = ifft.make_input_vec();
    let mut out = ifft.make_output_vec();
    let mut scratch = ifft.make_scratch_vec();
    let scale = 1.0 / n as f64;
    for t in 0..spec.frames {
        buf.copy_from_slice(spec.frame(ch, t));
        // the inverse real transform needs purely real DC and Nyquist bins
        buf[0].im = 0.0;
        buf[spec.bins - 1].im = 0.0;
        ifft.process_with_scratch(&mut buf, &mut out, &mut scratch)
            .expect("fft buffer sizes match plan");
        let start = t * cfg.hop;
        for i in 0..n {
            acc[start + i] += out[i] * scale * window[i];
            norm[start + i] += window[i] * window[i];
        }
    }
    let mut y = vec![0.0; length];
    for (i, v) in y.iter_mut().enumerate() {
        let p = i + half;
        if p < out_len && norm[p] > 1e-10 {
            *v = acc[p] / norm[p];
        }
    }
    Ok(y)
}

pub fn istft(spec: &ComplexSpectrogram, length: usize) -> Result<Vec<Vec<f64>>> {
    (0..spec.channels).map(|ch| istft_channel(spec, ch, length)).collect()
}

/// Real and imaginary planes stacked channel-wise:
/// `[Re X_1 .. Re X_M, Im X_1 .. Im X_M]`, each plane bins × frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexInputTensor {
    pub planes: usize,
    pub bins: usize,
    pub frames: usize,
    pub data: Vec<f64>,
}

impl ComplexInputTensor {
    pub fn get(&self, plane: usize, bin: usize, frame: usize) -> f64 {
        self.data[(plane * self.bins + bin) * self.frames + frame]
    }

    pub fn plane(&self, plane: usize) -> &[f64] {
        let n = self.bins * self.frames;
        &self.data[plane * n..(plane + 1) * n]
    }

    /// Inverse of [`complex_input`].
    pub fn to_spectrogram(&self, config: StftConfig, signal_len: usize) -> Result<ComplexSpectrogram> {
        if !self.planes.is_multiple_of(2) || self.bins != config.num_bins() {
            return Err(Error::Alignment(format!(
                "{} planes of {} bins do not unpack with fft size {}",
                self.planes, self.bins, config.fft_size
            )));
        }
        let m = self.planes / 2;
        let mut spec = ComplexSpectrogram::zeros(m, self.frames, signal_len, config);
        for ch in 0..m {
            for f in 0..self.bins {
                for t in 0..self.frames {
                    spec.set(ch, f, t, Complex64::new(self.get(ch, f, t), self.get(m + ch, f, t)));
                }
            }
        }
        Ok(spec)
    }
}

pub fn complex_input(spec: &ComplexSpectrogram) -> ComplexInputTensor {
    let (m, bins, frames) = spec.shape();
    let plane = bins * frames;
    let mut data = vec![0.0; 2 * m * plane];
    for ch in 0..m {
        for f in 0..bins {
            for t in 0..frames {
                let v = spec.get(ch, f, t);
                data[ch * plane + f * frames + t] = v.re;
                data[(m + ch) * plane + f * frames + t] = v.im;
            }
        }
    }
    ComplexInputTensor {
        planes: 2 * m,
        bins,
        frames,
        data,
    }
}

/// Delays `x` by `delay` samples (negative advances) with a linear phase
/// ramp on a zero-padded FFT. The output keeps the input length.
pub fn fractional_delay(x: &[f64], delay: f64) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let guard = 64;
    let nfft = (x.len() + 2 * delay.abs().ceil() as usize + 2 * guard).next_power_of_two();
    let mut planner = RealFftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(nfft);
    let ifft = planner.plan_fft_inverse(nfft);
    let mut buf = fft.make_input_vec();
    buf[..x.len()].copy_from_slice(x);
    let mut spec = fft.make_output_vec();
    fft.process(&mut buf, &mut spec).expect("fft buffer sizes match plan");

    let last = spec.len() - 1;
    for (k, v) in spec.iter_mut().enumerate() {
        let phase = -2.0 * PI * k as f64 * delay / nfft as f64;
        if k == last {
            // Nyquist: keep the real part of the ramp so the output stays real
            *v *= phase.cos();
        } else if k > 0 {
            *v *= Complex64::from_polar(1.0, phase);
        }
    }
    ifft.process(&mut spec, &mut buf).expect("fft buffer sizes match plan");
    let scale = 1.0 / nfft as f64;
    buf[..x.len()].iter().map(|v| v * scale).collect()
}
