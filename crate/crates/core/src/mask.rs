//! Oracle time-frequency masks and reference-phase reconstruction:
//! `S_hat(f,t) = m(f,t) |X_ref(f,t)| exp(j angle X_ref(f,t))`.

use num_complex::Complex64;

use crate::dsp::{self, ComplexSpectrogram};
use crate::error::{Error, Result};

pub const REFERENCE_CHANNEL: usize = 0;

/// Real mask over `bins × frames`, stored bin-major per frame like the
/// spectrogram it applies to.
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeMask {
    bins: usize,
    frames: usize,
    values: Vec<f64>,
    pub reference_channel: usize,
}

impl MagnitudeMask {
    pub fn from_fn(bins: usize, frames: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(bins * frames);
        for t in 0..frames {
            for k in 0..bins {
                values.push(f(k, t));
            }
        }
        Self {
            bins,
            frames,
            values,
            reference_channel: REFERENCE_CHANNEL,
        }
    }

    pub fn constant(bins: usize, frames: usize, v: f64) -> Self {
        Self::from_fn(bins, frames, |_, _| v)
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn get(&self, bin: usize, frame: usize) -> f64 {
        self.values[frame * self.bins + bin]
    }

    /// Values in frame-major order (`frame * bins + bin`).
    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

fn check_aligned(a: &ComplexSpectrogram, b: &ComplexSpectrogram) -> Result<()> {
    if a.bins() != b.bins() || a.frames() != b.frames() {
        return Err(Error::Alignment(format!(
            "spectrograms of {}×{} and {}×{} bins×frames",
            a.bins(),
            a.frames(),
            b.bins(),
            b.frames()
        )));
    }
    if a.channels() == 0 || b.channels() == 0 {
        return Err(Error::Alignment("empty spectrogram".into()));
    }
    Ok(())
}

/// Target and residual magnitudes on the reference channel of each input.
fn target_and_residual(
    target: &ComplexSpectrogram,
    mix: &ComplexSpectrogram,
    mut f: impl FnMut(f64, f64) -> f64,
) -> Result<MagnitudeMask> {
    check_aligned(target, mix)?;
    let ch = |s: &ComplexSpectrogram| {
        if s.channels() > REFERENCE_CHANNEL {
            REFERENCE_CHANNEL
        } else {
            0
        }
    };
    let (ct, cm) = (ch(target), ch(mix));
    Ok(MagnitudeMask::from_fn(mix.bins(), mix.frames(), |k, t| {
        let s = target.get(ct, k, t);
        let x = mix.get(cm, k, t);
        f(s.norm(), (x - s).norm())
    }))
}

/// `|S|^p / (|S|^p + |X - S|^p)`, with bins where both vanish set to 1
/// (the mixture there is all target).
pub fn ideal_ratio_mask(target: &ComplexSpectrogram, mix: &ComplexSpectrogram, exponent: f64) -> Result<MagnitudeMask> {
    if !(exponent > 0.0) || !exponent.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "mask exponent must be positive, got {exponent}"
        )));
    }
    target_and_residual(target, mix, |s, r| {
        let (sp, rp) = (s.powf(exponent), r.powf(exponent));
        if sp + rp > 0.0 {
            (sp / (sp + rp)).clamp(0.0, 1.0)
        } else {
            1.0
        }
    })
}

/// 1 where the target-to-residual power ratio reaches `threshold_db`.
/// A threshold of `-inf` keeps every bin and `+inf` none.
pub fn ideal_binary_mask(
    target: &ComplexSpectrogram,
    mix: &ComplexSpectrogram,
    threshold_db: f64,
) -> Result<MagnitudeMask> {
    if threshold_db.is_nan() {
        return Err(Error::InvalidConfig("threshold is NaN".into()));
    }
    target_and_residual(target, mix, |s, r| {
        // the tiny floor keeps the ratio finite, so only the infinite
        // thresholds are absolute
        let tiny = f64::MIN_POSITIVE;
        let ratio = 10.0 * ((s * s + tiny) / (r * r + tiny)).log10();
        if ratio >= threshold_db {
            1.0
        } else {
            0.0
        }
    })
}

/// Masked reference-channel spectrogram, before synthesis.
pub fn enhanced_spectrogram(m: &MagnitudeMask, x_ref: &ComplexSpectrogram) -> Result<ComplexSpectrogram> {
    if m.bins != x_ref.bins() || m.frames != x_ref.frames() {
        return Err(Error::Alignment(format!(
            "mask of {}×{} for a spectrogram of {}×{}",
            m.bins,
            m.frames,
            x_ref.bins(),
            x_ref.frames()
        )));
    }
    let ch = if x_ref.channels() > m.reference_channel {
        m.reference_channel
    } else {
        0
    };
    let mut out = ComplexSpectrogram::zeros(1, x_ref.frames(), x_ref.signal_len(), *x_ref.config());
    for t in 0..x_ref.frames() {
        for k in 0..x_ref.bins() {
            let x = x_ref.get(ch, k, t);
            out.set(0, k, t, Complex64::from_polar(m.get(k, t) * x.norm(), x.arg()));
        }
    }
    Ok(out)
}

pub fn apply_mask(m: &MagnitudeMask, x_ref: &ComplexSpectrogram) -> Result<Vec<f64>> {
    let spec = enhanced_spectrogram(m, x_ref)?;
    dsp::istft_channel(&spec, 0, x_ref.signal_len())
}
