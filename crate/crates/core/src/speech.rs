//! Speech-like test signals: a glottal harmonic train with a drifting pitch,
//! formant-shaped spectra that change per syllable, 2-6 Hz syllabic
//! amplitude modulation and occasional fricative noise bursts.
//!
//! Used whenever no source recordings are supplied. The signals are not
//! intelligible speech, but they share its long-term spectrum, its
//! modulation rate and its on/off structure, which is what the spatial
//! baselines and the metrics are sensitive to.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeechParams {
    pub sample_rate: u32,
    pub duration_s: f64,
    pub f0_range: (f64, f64),
    pub syllable_rate_range: (f64, f64),
    /// Probability that a syllable is an unvoiced noise burst.
    pub fricative_prob: f64,
    pub rms: f64,
}

impl Default for SpeechParams {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            duration_s: 4.0,
            f0_range: (90.0, 250.0),
            syllable_rate_range: (2.0, 6.0),
            fricative_prob: 0.2,
            rms: 0.1,
        }
    }
}

struct Syllable {
    start: usize,
    len: usize,
    formants: [(f64, f64); 3],
    voiced: bool,
    level: f64,
}

fn formant_gain(f: f64, formants: &[(f64, f64); 3]) -> f64 {
    formants
        .iter()
        .map(|&(fc, bw)| 1.0 / (1.0 + ((f - fc) / bw).powi(2)))
        .sum::<f64>()
        // glottal source roll-off, roughly -6 dB per octave above 200 Hz
        * (200.0 / f.max(200.0))
}

fn syllables<R: Rng>(n: usize, fs: f64, p: &SpeechParams, rng: &mut R) -> Vec<Syllable> {
    let rate = rng.gen_range(p.syllable_rate_range.0..=p.syllable_rate_range.1);
    let mut out = Vec::new();
    let mut t = (rng.gen_range(0.0..0.15) * fs) as usize;
    while t < n {
        let period = fs / rate * rng.gen_range(0.7..1.3);
        let len = (period * rng.gen_range(0.65..0.9)) as usize;
        let f1 = rng.gen_range(300.0..850.0);
        let f2 = rng.gen_range(850.0..2300.0);
        let f3 = rng.gen_range(2300.0..3200.0);
        out.push(Syllable {
            start: t,
            len: len.max(1),
            formants: [(f1, 80.0), (f2, 120.0), (f3, 180.0)],
            voiced: !rng.gen_bool(p.fricative_prob),
            level: rng.gen_range(0.5..1.0),
        });
        t += period as usize;
        // occasional pause between phrases
        if rng.gen_bool(0.1) {
            t += (rng.gen_range(0.1..0.3) * fs) as usize;
        }
    }
    out
}

/// One speech-like signal of `duration_s` seconds, normalized to `rms`.
pub fn synth_speech<R: Rng>(params: &SpeechParams, rng: &mut R) -> Vec<f64> {
    let fs = params.sample_rate as f64;
    let n = (params.duration_s * fs).round() as usize;
    let f0 = rng.gen_range(params.f0_range.0..=params.f0_range.1);
    let vibrato = rng.gen_range(0.2..0.8);
    let vib_phase = rng.gen_range(0.0..2.0 * PI);
    let sylls = syllables(n, fs, params, rng);
    let nyquist = 0.45 * fs;

    let mut out = vec![0.0; n];
    let mut phase = 0.0;
    // first-difference state for fricative noise (tilts it toward high frequencies)
    let mut prev_noise = 0.0;
    let mut cursor = 0;
    let mut gains = Vec::new();
    for (i, v) in out.iter_mut().enumerate() {
        let t = i as f64 / fs;
        // declining pitch with slow vibrato
        let pitch =
            f0 * (1.0 - 0.08 * t / params.duration_s) * (1.0 + 0.06 * (2.0 * PI * vibrato * t + vib_phase).sin());
        phase = (phase + 2.0 * PI * pitch / fs) % (2.0 * PI);
        while cursor + 1 < sylls.len() && sylls[cursor + 1].start <= i {
            cursor += 1;
        }
        let noise: f64 = rng.sample(StandardNormal);
        let hiss = noise - prev_noise;
        prev_noise = noise;
        let Some(s) = sylls.get(cursor).filter(|s| i >= s.start && i < s.start + s.len) else {
            // low breath noise between syllables
            *v = 0.002 * hiss;
            continue;
        };
        // raised-sine syllable envelope
        let env = s.level * (PI * (i - s.start) as f64 / s.len as f64).sin().powi(2);
        if !s.voiced {
            *v = 0.3 * env * hiss;
            continue;
        }
        // refresh harmonic gains every 10 ms
        if i % 160 == 0 || gains.is_empty() {
            let count = (nyquist / pitch) as usize;
            gains = (1..=count)
                .map(|h| formant_gain(h as f64 * pitch, &s.formants))
                .collect();
        }
        let harmonics: f64 = gains
            .iter()
            .enumerate()
            .map(|(h, g)| g * ((h + 1) as f64 * phase).sin())
            .sum();
        *v = env * (harmonics + 0.02 * noise);
    }

    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64).sqrt();
    if rms > 0.0 {
        let k = params.rms / rms;
        out.iter_mut().for_each(|v| *v *= k);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn length_level_and_determinism() {
        let p = SpeechParams::default();
        let a = synth_speech(&p, &mut ChaCha8Rng::seed_from_u64(3));
        let b = synth_speech(&p, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        assert_eq!(a.len(), 64_000);
        let rms = (a.iter().map(|v| v * v).sum::<f64>() / a.len() as f64).sqrt();
        assert!((rms - 0.1).abs() < 1e-12);
        assert!(a.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn has_syllabic_on_off_structure() {
        let a = synth_speech(&SpeechParams::default(), &mut ChaCha8Rng::seed_from_u64(8));
        // 20 ms frame energies span a wide dynamic range
        let e: Vec<f64> = a.chunks(320).map(|c| c.iter().map(|v| v * v).sum::<f64>()).collect();
        let max = e.iter().cloned().fold(0.0, f64::max);
        let min = e.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(10.0 * (max / min.max(1e-30)).log10() > 30.0);
    }
}
