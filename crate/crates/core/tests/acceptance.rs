//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Worker count follows `TETRABENCH_WORKERS`.

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use tetrabench::beamform::{self, SteeringVector, DEFAULT_LOADING};
use tetrabench::corpus::{self, BenchmarkConfig, BenchmarkReport, CorpusConfig, Method, Regime};
use tetrabench::dsp::{self, StftConfig};
use tetrabench::geometry::{ArrayGeometry, Direction, Vec3};
use tetrabench::metrics::{self, SnrBin};
use tetrabench::roomsim::{self, RoomSpec, SceneDistribution, SourcePlacement, SourceRole};
use tetrabench::spatial;
use tetrabench::speech::{synth_speech, SpeechParams};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn workers() -> usize {
    corpus::workers_from_env().unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

fn dist(a: Vec3, b: Vec3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn speech(seed: u64, seconds: f64) -> Vec<f64> {
    let p = SpeechParams {
        duration_s: seconds,
        ..SpeechParams::default()
    };
    synth_speech(&p, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn mean_si_sdri(r: &BenchmarkReport, m: Method) -> f64 {
    r.result(m)
        .and_then(|b| b.summary.overall.si_sdri.mean)
        .unwrap_or(f64::NAN)
}

fn hard_corpus_report(dir: &Path) -> tetrabench::Result<BenchmarkReport> {
    let cfg = CorpusConfig {
        n: 200,
        regime: Regime::Hard,
        master_seed: 0,
        ..CorpusConfig::default()
    };
    let t = Instant::now();
    corpus::synth_corpus(&cfg, None, dir, workers())?;
    let bench = BenchmarkConfig {
        methods: vec![Method::Mixture, Method::DasOracle, Method::MvdrOracle, Method::Irm],
        ..BenchmarkConfig::default()
    };
    let r = corpus::run_benchmark(dir, &bench, workers())?;
    eprintln!(
        "hard corpus (200 items) synthesized and scored in {:.0} s",
        t.elapsed().as_secs_f64()
    );
    Ok(r)
}

fn baselines_below_mixture(r: &BenchmarkReport) -> Outcome {
    let das = mean_si_sdri(r, Method::DasOracle);
    let mvdr = mean_si_sdri(r, Method::MvdrOracle);
    let n = r.corpus.count;
    outcome(
        n >= 200 && das < 0.0 && mvdr < 0.0 && mvdr <= das && r.failures() == 0,
        format!("N={n}: DAS {das:.2} dB, MVDR {mvdr:.2} dB mean SI-SDRi"),
    )
}

fn mask_headroom(r: &BenchmarkReport) -> Outcome {
    let Some(irm) = r.result(Method::Irm) else {
        return outcome(false, "no IRM results");
    };
    let vals: Vec<f64> = irm.items.iter().filter_map(|i| i.metrics.map(|m| m.si_sdri)).collect();
    let positive = vals.iter().filter(|&&v| v > 0.0).count() as f64 / irm.items.len() as f64;
    let mean = mean_si_sdri(r, Method::Irm);
    let others = [Method::Mixture, Method::DasOracle, Method::MvdrOracle].map(|m| mean_si_sdri(r, m));
    outcome(
        positive >= 0.95 && others.iter().all(|&o| mean > o),
        format!(
            "IRM SI-SDRi > 0 on {:.1}% of items, mean {mean:.2} dB vs mixture {:.2} / DAS {:.2} / MVDR {:.2}",
            100.0 * positive,
            others[0],
            others[1],
            others[2]
        ),
    )
}

fn das_positive_control() -> Outcome {
    let g = ArrayGeometry::default_tetrahedron();
    let fs = g.sample_rate();
    // a distant source in a large anechoic room is a plane wave at the array
    let room = RoomSpec {
        dimensions: [400.0, 400.0, 400.0],
        rt60: 0.5,
        max_image_order: 0,
        sample_rate: fs,
    };
    let center = [200.0, 200.0, 200.0];
    let look = Direction::from_degrees(25.0, 10.0);
    let src = SourcePlacement::from_direction(look, 150.0, SourceRole::Target, center);
    let rir = match roomsim::simulate_rir(&room, &src, &g, center) {
        Ok(r) => r,
        Err(e) => return outcome(false, e.to_string()),
    };
    let s = speech(3, 4.0);
    let target = roomsim::convolve_rir(&s, &rir);
    // keep the part after the direct path has arrived everywhere
    let start = rir.direct_path_sample.iter().cloned().fold(0.0, f64::max).ceil() as usize + 64;
    let target: Vec<Vec<f64>> = target.iter().map(|c| c[start..].to_vec()).collect();
    let sigma = power(&target[0]).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let noise: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..target[0].len()).map(|_| sigma * gauss(&mut rng)).collect())
        .collect();
    let (Ok(yt), Ok(yn)) = (beamform::das(&target, &g, look), beamform::das(&noise, &g, look)) else {
        return outcome(false, "DAS failed");
    };
    // skip the fractional-delay edges
    let trim = |y: &[f64]| y[200..y.len() - 200].to_vec();
    let snr_in: f64 = (0..4).map(|m| power(&target[m]) / power(&noise[m])).sum::<f64>() / 4.0;
    let snr_out = power(&trim(&yt)) / power(&trim(&yn));
    let gain = 10.0 * (snr_out / snr_in).log10();
    outcome((gain - 6.02).abs() <= 0.5, format!("DAS SNR gain {gain:.2} dB"))
}

fn geometry_constants() -> Outcome {
    let g = ArrayGeometry::default_tetrahedron();
    let (d, t) = (g.max_pair_distance(), g.max_delay_samples());
    outcome(
        (d - 0.0943).abs() <= 1e-4 && (t - 4.40).abs() <= 0.02,
        format!("max baseline {d:.5} m, max delay {t:.3} samples"),
    )
}

/// First local maximum of `|h|` reaching half the global peak. Coincident
/// reflections can outgrow the direct sound, but nothing arrives before it.
fn first_arrival(h: &[f64]) -> f64 {
    let max = h.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let Some(mut i) = h.iter().position(|v| v.abs() >= 0.5 * max) else {
        return f64::NAN;
    };
    while i + 1 < h.len() && h[i + 1].abs() > h[i].abs() {
        i += 1;
    }
    i as f64
}

fn rir_validity() -> Outcome {
    let g = ArrayGeometry::default_tetrahedron();
    let dist_cfg = SceneDistribution {
        rt60_min: 0.2,
        rt60_max: 0.8,
        ..SceneDistribution::default()
    };
    let (mut worst_peak, mut worst_t60) = (0.0f64, 0.0f64);
    let mut failures = Vec::new();
    for seed in 0..100u64 {
        let draw = match roomsim::sample_scene(seed, &dist_cfg) {
            Ok(d) => d,
            Err(e) => return outcome(false, format!("scene {seed}: {e}")),
        };
        let rir = match roomsim::simulate_rir(&draw.room, &draw.target, &g, draw.array_center) {
            Ok(r) => r,
            Err(e) => return outcome(false, format!("scene {seed}: {e}")),
        };
        let fs = draw.room.sample_rate as f64;
        for (m, pos) in g.placed_at(draw.array_center).iter().enumerate() {
            let h = &rir.taps[m];
            let predicted = dist(*pos, draw.target.position) / g.speed_of_sound() * fs;
            let peak = first_arrival(h);
            let off = (peak - predicted).abs();
            worst_peak = worst_peak.max(off);
            let t60_err = match roomsim::estimate_t60(h, draw.room.sample_rate) {
                Some(t) => (t - draw.room.rt60).abs() / draw.room.rt60,
                None => f64::INFINITY,
            };
            worst_t60 = worst_t60.max(t60_err);
            if !(off <= 1.0) || !(t60_err <= 0.3) {
                failures.push(format!("scene {seed} mic {m}"));
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "100 scenes x 4 mics: worst first-arrival offset {worst_peak:.2} samples, worst T60 error {:.1}%{}",
            100.0 * worst_t60,
            if failures.is_empty() {
                String::new()
            } else {
                format!(", failing: {}", failures.join(", "))
            }
        ),
    )
}

fn spatial_accuracy() -> Outcome {
    let g = ArrayGeometry::default_tetrahedron();
    let dist_cfg = SceneDistribution {
        distance_m: (1.0, 1.5),
        ..SceneDistribution::anechoic()
    };
    let fs = g.sample_rate() as f64;
    let (mut worst_tdoa, mut worst_doa) = (0.0f64, 0.0f64);
    let mut bad = 0;
    for seed in 0..500u64 {
        let run = || -> tetrabench::Result<(f64, f64)> {
            let draw = roomsim::sample_scene(10_000 + seed, &dist_cfg)?;
            let rir = roomsim::simulate_rir(&draw.room, &draw.target, &g, draw.array_center)?;
            let s = speech(seed, 1.0);
            let x = roomsim::convolve_rir(&s, &rir);
            let silent = vec![vec![0.0; s.len()]; 4];
            let rec = roomsim::mix_with_gain(&x, &silent, 0.0, Some(-50.0), &mut ChaCha8Rng::seed_from_u64(seed))?;
            let f = spatial::gcc_features(&rec.mixture, &g, spatial::DEFAULT_BINS)?;
            let t = spatial::estimate_tdoas(&f);
            let mics = g.placed_at(draw.array_center);
            let arrival: Vec<f64> = mics
                .iter()
                .map(|p| dist(*p, draw.target.position) / g.speed_of_sound() * fs)
                .collect();
            let tdoa_err = t
                .pairs
                .iter()
                .zip(&t.delays)
                .map(|(&(i, j), d)| (d - (arrival[j] - arrival[i])).abs())
                .fold(0.0, f64::max);
            let doa = spatial::doa_least_squares(&t, &g)?;
            Ok((
                tdoa_err,
                doa.direction.angle_to(&draw.target.direction_from_array).to_degrees(),
            ))
        };
        match run() {
            Ok((te, de)) => {
                worst_tdoa = worst_tdoa.max(te);
                worst_doa = worst_doa.max(de);
                if !(te <= 0.5 && de <= 5.0) {
                    bad += 1;
                }
            }
            Err(e) => return outcome(false, format!("scene {seed}: {e}")),
        }
    }
    outcome(
        bad == 0,
        format!("500 anechoic scenes: worst TDOA error {worst_tdoa:.3} samples, worst DOA error {worst_doa:.2}°, {bad} out of tolerance"),
    )
}

fn transform_fidelity() -> Outcome {
    let run = || -> tetrabench::Result<(f64, f64, f64)> {
        let cfg = StftConfig::default();
        let g = ArrayGeometry::default_tetrahedron();
        let draw = roomsim::sample_scene(5, &SceneDistribution::default())?;
        let rec = roomsim::render_scene(
            &draw,
            &g,
            &speech(1, 4.0),
            &speech(2, 4.0),
            3.0,
            Some(-50.0),
            &mut ChaCha8Rng::seed_from_u64(5),
        )?;
        let x = &rec.mixture[0];
        let s = dsp::stft(x, &cfg)?;
        let y = dsp::istft_channel(&s, 0, x.len())?;
        let err: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum();
        let round_trip = (err / x.iter().map(|v| v * v).sum::<f64>()).sqrt();

        let env = cfg.squared_window_envelope(x.len());
        let e_time: f64 = x.iter().zip(&env).map(|(v, w)| v * v * w).sum();
        let parseval = (s.energy() - e_time).abs() / e_time;

        let spec = dsp::stft_multi(&rec.mixture, &cfg)?;
        let cov = beamform::estimate_covariance(&spec, DEFAULT_LOADING);
        let steer = SteeringVector::new(&g, draw.target.direction_from_array, &cfg);
        let w = beamform::mvdr_weights(&steer, &cov)?;
        let distortion = w
            .iter()
            .enumerate()
            .map(|(k, wk)| {
                let r: num_complex::Complex64 = wk.iter().zip(steer.at(k)).map(|(a, d)| a.conj() * d).sum();
                (r - 1.0).norm()
            })
            .fold(0.0, f64::max);
        Ok((round_trip, parseval, distortion))
    };
    match run() {
        Ok((rt, pv, dl)) => outcome(
            rt < 1e-6 && pv < 1e-6 && dl < 1e-6,
            format!("round-trip rel. error {rt:.2e}, Parseval rel. error {pv:.2e}, max |wᴴd - 1| {dl:.2e}"),
        ),
        Err(e) => outcome(false, e.to_string()),
    }
}

fn metric_correctness() -> Outcome {
    let s = speech(21, 3.0);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n: Vec<f64> = (0..s.len()).map(|_| 0.05 * gauss(&mut rng)).collect();
    let e: Vec<f64> = s.iter().zip(&n).map(|(a, b)| a + b).collect();
    let mut notes = Vec::new();
    let mut ok = true;
    let mut check = |cond: bool, what: String| {
        if !cond {
            ok = false;
        }
        notes.push(what);
    };

    let base = metrics::si_sdr(&s, &e).unwrap_or(f64::NAN);
    let exact = [-6, -1, 1, 3, 10].iter().all(|&k| {
        let p = 2f64.powi(k);
        let scaled: Vec<f64> = e.iter().map(|v| v * p).collect();
        metrics::si_sdr(&s, &scaled).ok() == Some(base)
    });
    check(exact, format!("scale invariance exact: {exact}"));

    // orthogonal noise: remove the projection onto s
    let k = s.iter().zip(&n).map(|(a, b)| a * b).sum::<f64>() / s.iter().map(|a| a * a).sum::<f64>();
    let orth: Vec<f64> = n.iter().zip(&s).map(|(b, a)| b - k * a).collect();
    let eo: Vec<f64> = s.iter().zip(&orth).map(|(a, b)| a + b).collect();
    let closed = 10.0 * (power(&s) / power(&orth)).log10();
    let got = metrics::si_sdr(&s, &eo).unwrap_or(f64::NAN);
    check(
        (got - closed).abs() <= 1e-9,
        format!("orthogonal closed form off by {:.1e} dB", (got - closed).abs()),
    );

    let st = metrics::stoi(&s, &s, 16_000).unwrap_or(f64::NAN);
    check((st - 1.0).abs() <= 1e-3, format!("STOI self-score {st:.6}"));

    let same = (0..5u64).all(|seed| {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let est: Vec<f64> = s.iter().map(|v| 0.7 * v + 0.1 * gauss(&mut r)).collect();
        matches!(metrics::bss_eval_single(&s, &est, metrics::BSS_FILTER_TAPS), Ok((sdr, sar)) if sdr.to_bits() == sar.to_bits())
    });
    check(same, format!("SDR == SAR: {same}"));

    let bins_ok = SnrBin::of(-1.0).ok() == Some(SnrBin::M1To1)
        && SnrBin::of(1.0 - 1e-12).ok() == Some(SnrBin::M1To1)
        && SnrBin::of(1.0).ok() == Some(SnrBin::From1To3)
        && SnrBin::of(3.0).ok() == Some(SnrBin::From3To5)
        && SnrBin::of(5.0).ok() == Some(SnrBin::From5To7)
        && SnrBin::of(7.0 - 1e-12).ok() == Some(SnrBin::From5To7)
        && SnrBin::of(7.0).ok() == Some(SnrBin::From7To10)
        && SnrBin::of(10.0).ok() == Some(SnrBin::From7To10)
        && SnrBin::of(10.0 + 1e-9).is_err()
        && SnrBin::of(-1.0 - 1e-9).is_err();
    check(bins_ok, format!("SNR bin edges: {bins_ok}"));
    outcome(ok, notes.join("; "))
}

fn determinism() -> Outcome {
    let run = |workers: usize| -> tetrabench::Result<(String, String)> {
        let dir = tempfile::tempdir()?;
        let cfg = CorpusConfig {
            n: 12,
            master_seed: 99,
            ..CorpusConfig::default()
        };
        let m = corpus::synth_corpus(&cfg, None, dir.path(), workers)?;
        let r = corpus::run_benchmark(dir.path(), &BenchmarkConfig::default(), workers)?;
        Ok((m.to_json()?, r.to_json()?))
    };
    match (run(1), run(3)) {
        (Ok(a), Ok(b)) => outcome(
            a == b,
            format!(
                "1 vs 3 workers: manifest identical {}, report identical {}",
                a.0 == b.0,
                a.1 == b.1
            ),
        ),
        (Err(e), _) | (_, Err(e)) => outcome(false, e.to_string()),
    }
}

fn main() -> ExitCode {
    let corpus_dir = tempfile::tempdir().expect("temp dir");
    let hard = hard_corpus_report(corpus_dir.path());
    let from_hard = |f: fn(&BenchmarkReport) -> Outcome| -> Outcome {
        match &hard {
            Ok(r) => f(r),
            Err(e) => outcome(false, format!("corpus run failed: {e}")),
        }
    };
    let results = [
        (
            "1 oracle beamformers fall below the mixture",
            from_hard(baselines_below_mixture),
        ),
        ("2 DAS positive control", das_positive_control()),
        ("3 oracle mask headroom", from_hard(mask_headroom)),
        ("4 geometry constants", geometry_constants()),
        ("5 RIR physical validity", rir_validity()),
        ("6 spatial accuracy", spatial_accuracy()),
        ("7 transform fidelity", transform_fidelity()),
        ("8 metric correctness", metric_correctness()),
        ("9 determinism across worker counts", determinism()),
    ];
    let mut failed = 0;
    for (name, o) in &results {
        println!(
            "{} criterion {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", results.len());
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
