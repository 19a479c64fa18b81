//! End-to-end checks on simulated anechoic scenes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tetrabench::beamform;
use tetrabench::dsp::{self, StftConfig};
use tetrabench::geometry::ArrayGeometry;
use tetrabench::mask;
use tetrabench::metrics;
use tetrabench::roomsim::{self, SceneDistribution, SceneRecording};
use tetrabench::spatial;
use tetrabench::speech::{synth_speech, SpeechParams};

fn speech(seed: u64, seconds: f64) -> Vec<f64> {
    let p = SpeechParams {
        duration_s: seconds,
        ..SpeechParams::default()
    };
    synth_speech(&p, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn anechoic_pair(seed: u64, snr_db: f64) -> (roomsim::SceneDraw, SceneRecording) {
    let g = ArrayGeometry::default_tetrahedron();
    let draw = roomsim::sample_scene(seed, &SceneDistribution::anechoic()).unwrap();
    let rec = roomsim::render_scene(
        &draw,
        &g,
        &speech(2 * seed, 4.0),
        &speech(2 * seed + 1, 4.0),
        snr_db,
        Some(-50.0),
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
    .unwrap();
    (draw, rec)
}

#[test]
fn irm_on_anechoic_equal_level_talkers() {
    let cfg = StftConfig::default();
    let mut gains = Vec::new();
    for seed in 0..5 {
        let (_, rec) = anechoic_pair(seed, 0.0);
        let target = dsp::stft(&rec.clean_reference, &cfg).unwrap();
        let mix = dsp::stft(&rec.mixture[0], &cfg).unwrap();
        let m = mask::ideal_ratio_mask(&target, &mix, 1.0).unwrap();
        let est = mask::apply_mask(&m, &mix).unwrap();
        gains.push(metrics::si_sdri(&rec.clean_reference, &est, &rec.mixture[0]).unwrap());
    }
    let mean = gains.iter().sum::<f64>() / gains.len() as f64;
    println!("IRM SI-SDRi at 0 dB, anechoic: {gains:.2?}, mean {mean:.2} dB");
    assert!(gains.iter().all(|&g| g > 10.0), "{gains:?}");
}

#[test]
fn das_helps_when_its_model_holds() {
    let g = ArrayGeometry::default_tetrahedron();
    for seed in 0..5 {
        let (draw, rec) = anechoic_pair(100 + seed, 0.0);
        let y = beamform::das(&rec.mixture, &g, draw.target.direction_from_array).unwrap();
        let gain = metrics::si_sdri(&rec.clean_reference, &y, &rec.mixture[0]).unwrap();
        assert!(gain > 0.0, "seed {seed}: {gain:.2} dB");
    }
}

#[test]
fn anechoic_tdoas_match_farfield_model() {
    let g = ArrayGeometry::default_tetrahedron();
    let dist = SceneDistribution {
        distance_m: (1.0, 1.5),
        ..SceneDistribution::anechoic()
    };
    let mut worst = 0.0f64;
    for seed in 0..500u64 {
        let draw = roomsim::sample_scene(50_000 + seed, &dist).unwrap();
        let rir = roomsim::simulate_rir(&draw.room, &draw.target, &g, draw.array_center).unwrap();
        let x = roomsim::convolve_rir(&speech(seed, 1.0), &rir);
        let t = spatial::estimate_tdoas(&spatial::gcc_features(&x, &g, spatial::DEFAULT_BINS).unwrap());
        let ff = g.farfield_delays(draw.target.direction_from_array);
        for (&(i, j), d) in t.pairs.iter().zip(&t.delays) {
            worst = worst.max((d - (ff[j] - ff[i])).abs());
        }
    }
    assert!(worst <= 0.6, "worst far-field TDOA mismatch {worst:.3} samples");
}
