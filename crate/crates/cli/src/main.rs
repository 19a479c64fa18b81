use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use log::{error, info};
use serde::{Deserialize, Serialize};

use tetrabench::corpus::{
    self, Beamformer, BenchmarkConfig, BenchmarkReport, CorpusConfig, CorpusManifest, LoadedScene, Method, Regime,
    Steering,
};
use tetrabench::dsp::{self, StftConfig};
use tetrabench::geometry::ArrayGeometry;
use tetrabench::io;
use tetrabench::mask;
use tetrabench::metrics::MetricsReport;
use tetrabench::roomsim::{self, SceneDistribution};
use tetrabench::spatial;

#[derive(Parser)]
#[command(name = "tetrabench", version, about = "Compact-array speech extraction benchmark")]
struct Cli {
    /// JSON file with `corpus`, `benchmark` and `workers` sections; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log more (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a corpus of reverberant two-talker scenes.
    Synth {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, value_enum)]
        regime: Option<RegimeArg>,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory of source WAVs; the built-in speech-like generator is used without it.
        #[arg(long)]
        sources: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the 4-channel target image (for the oracle-interference MVDR).
        #[arg(long)]
        write_target_image: bool,
    },
    /// Simulate one scene's RIRs and report direct path and T60.
    Rir {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = SourceArg::Target)]
        source: SourceArg,
        /// Direct path only.
        #[arg(long)]
        anechoic: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// GCC-PHAT TDOAs and least-squares DOA for scenes.
    Spatial {
        #[command(flatten)]
        scenes: SceneArgs,
        #[arg(long, default_value_t = spatial::DEFAULT_BINS)]
        bins: usize,
        /// Write the feature tensor of each scene as `gcc.json`.
        #[arg(long)]
        dump: bool,
    },
    /// Beamform scenes; writes `est.wav` and `metrics.json`.
    Beamform {
        #[command(flatten)]
        scenes: SceneArgs,
        #[arg(long, value_enum)]
        method: BeamformerArg,
        #[arg(long, value_enum, default_value_t = SteerArg::Oracle)]
        steer: SteerArg,
    },
    /// Oracle-mask extraction; writes `est.wav` and `metrics.json`.
    Extract {
        #[command(flatten)]
        scenes: SceneArgs,
        #[arg(long, value_enum)]
        mask: MaskArg,
        /// Also dump the mask and mixture spectrogram as binary tensors.
        #[arg(long)]
        dump: bool,
    },
    /// Run the benchmark over a corpus and write `results.json`.
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        /// Comma-separated methods (default: all headline methods).
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
        /// Defaults to `<corpus>/results.json`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print tables from a stored `results.json`.
    Report {
        #[arg(long)]
        results: PathBuf,
        /// Write the recomputed report JSON here.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct SceneArgs {
    /// Scene directories.
    #[arg(long, num_args = 1..)]
    scene: Vec<PathBuf>,
    /// Process every scene of this corpus.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Write outputs under `<out>/<scene name>/` instead of the scene directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum RegimeArg {
    Base,
    Cl1,
    Hard,
}

#[derive(Clone, Copy, ValueEnum)]
enum SourceArg {
    Target,
    Interferer,
}

#[derive(Clone, Copy, ValueEnum)]
enum BeamformerArg {
    Das,
    Mvdr,
}

#[derive(Clone, Copy, ValueEnum)]
enum SteerArg {
    Oracle,
    Estimated,
}

#[derive(Clone, Copy, ValueEnum)]
enum MaskArg {
    Irm,
    Ibm,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    corpus: CorpusConfig,
    benchmark: BenchmarkConfig,
    workers: Option<usize>,
}

fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(p) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
}

/// Environment override, then the config file, then all cores.
fn worker_count(cfg: &FileConfig) -> usize {
    corpus::workers_from_env()
        .or(cfg.workers)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

fn scene_dirs(args: &SceneArgs) -> Result<Vec<PathBuf>> {
    let mut dirs = args.scene.clone();
    if let Some(c) = &args.corpus {
        let m = CorpusManifest::load(c)?;
        dirs.extend((0..m.count).map(|i| m.scene_dir(c, i)));
    }
    if dirs.is_empty() {
        bail!("give --scene DIR or --corpus DIR");
    }
    Ok(dirs)
}

fn output_dir(args: &SceneArgs, scene: &Path) -> Result<PathBuf> {
    let dir = match &args.out {
        Some(o) => o.join(scene.file_name().context("scene path has no name")?),
        None => scene.to_path_buf(),
    };
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

#[derive(Serialize)]
struct ItemMetrics<'a> {
    scene: String,
    method: &'a str,
    steer: Option<&'a str>,
    azimuth_deg: Option<f64>,
    elevation_deg: Option<f64>,
    metrics: MetricsReport,
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

/// Runs `f` on every scene, logging failures; errors if any scene failed.
fn for_each_scene(dirs: &[PathBuf], mut f: impl FnMut(&Path, &LoadedScene) -> Result<()>) -> Result<()> {
    let mut failed = 0;
    for d in dirs {
        let outcome = corpus::load_scene(d)
            .map_err(anyhow::Error::from)
            .and_then(|s| f(d, &s));
        if let Err(e) = outcome {
            error!("{}: {e:#}", d.display());
            failed += 1;
        }
    }
    if failed > 0 {
        bail!("{failed} of {} scenes failed", dirs.len());
    }
    Ok(())
}

fn scene_name(d: &Path) -> String {
    d.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(cli.config.as_deref())?;
    let workers = worker_count(&cfg);
    match cli.command {
        Command::Synth {
            n,
            regime,
            seed,
            sources,
            out,
            write_target_image,
        } => {
            if let Some(n) = n {
                cfg.corpus.n = n;
            }
            if let Some(r) = regime {
                cfg.corpus.regime = match r {
                    RegimeArg::Base => Regime::Base,
                    RegimeArg::Cl1 => Regime::Cl1,
                    RegimeArg::Hard => Regime::Hard,
                };
            }
            if let Some(s) = seed {
                cfg.corpus.master_seed = s;
            }
            cfg.corpus.write_target_image |= write_target_image;
            let m = corpus::synth_corpus(&cfg.corpus, sources.as_deref(), &out, workers)?;
            println!(
                "{} scenes ({} regime) written to {}",
                m.count,
                m.regime.name.name(),
                out.display()
            );
        }
        Command::Rir {
            seed,
            source,
            anechoic,
            out,
        } => {
            let dist = if anechoic {
                SceneDistribution::anechoic()
            } else {
                cfg.corpus.scene.clone()
            };
            let draw = roomsim::sample_scene(seed, &dist)?;
            let g = ArrayGeometry::default_tetrahedron();
            let src = match source {
                SourceArg::Target => draw.target,
                SourceArg::Interferer => draw.interferer,
            };
            let rir = roomsim::simulate_rir(&draw.room, &src, &g, draw.array_center)?;
            fs::create_dir_all(&out)?;
            io::write_wav(&out.join("rir.wav"), &rir.taps, draw.room.sample_rate)?;
            let t60: Vec<Option<f64>> = rir
                .taps
                .iter()
                .map(|h| roomsim::estimate_t60(h, draw.room.sample_rate))
                .collect();
            let peaks: Vec<usize> = rir
                .taps
                .iter()
                .map(|h| {
                    h.iter()
                        .enumerate()
                        .fold((0, 0.0), |b, (i, v)| if v.abs() > b.1 { (i, v.abs()) } else { b })
                        .0
                })
                .collect();
            write_json(
                &out.join("rir.json"),
                &serde_json::json!({
                    "scene": draw,
                    "direct_path_sample": rir.direct_path_sample,
                    "peak_sample": peaks,
                    "t60_estimate": t60,
                }),
            )?;
            println!(
                "room {:?} m, rt60 {:.3} s, image order {}",
                draw.room.dimensions, draw.room.rt60, draw.room.max_image_order
            );
            for m in 0..rir.taps.len() {
                println!(
                    "mic {m}: direct path {:.2} samples, peak {}, T60 {}",
                    rir.direct_path_sample[m],
                    peaks[m],
                    t60[m].map(|t| format!("{t:.3} s")).unwrap_or_else(|| "n/a".into())
                );
            }
        }
        Command::Spatial { scenes, bins, dump } => {
            let dirs = scene_dirs(&scenes)?;
            for_each_scene(&dirs, |d, s| {
                let g = s.record.geometry()?;
                let f = spatial::gcc_features(&s.mixture, &g, bins)?;
                let t = spatial::estimate_tdoas(&f);
                let doa = spatial::doa_least_squares(&t, &g)?;
                let truth = s.record.target.direction();
                let ff = g.farfield_delays(truth);
                println!("{}", scene_name(d));
                for (p, &(i, j)) in t.pairs.iter().enumerate() {
                    println!(
                        "  pair ({i},{j}): tdoa {:+.2} samples (target far-field {:+.2}), confidence {:.3}",
                        t.delays[p],
                        ff[j] - ff[i],
                        t.confidence[p]
                    );
                }
                let (az, el) = doa.direction.to_degrees();
                println!(
                    "  doa az {az:.1}° el {el:.1}° (target {:.1}°, {:.1}°), error {:.1}°, residual {:.3}{}",
                    s.record.target.azimuth_deg,
                    s.record.target.elevation_deg,
                    doa.direction.angle_to(&truth).to_degrees(),
                    doa.residual,
                    if doa.degenerate { " (degenerate)" } else { "" }
                );
                if dump {
                    fs::write(output_dir(&scenes, d)?.join("gcc.json"), f.to_json()?)?;
                }
                Ok(())
            })?;
        }
        Command::Beamform { scenes, method, steer } => {
            let dirs = scene_dirs(&scenes)?;
            let (kind, kname) = match method {
                BeamformerArg::Das => (Beamformer::Das, "das"),
                BeamformerArg::Mvdr => (Beamformer::Mvdr, "mvdr"),
            };
            let (steering, sname) = match steer {
                SteerArg::Oracle => (Steering::Oracle, "oracle"),
                SteerArg::Estimated => (Steering::Estimated, "estimated"),
            };
            for_each_scene(&dirs, |d, s| {
                let (est, dir) = corpus::beamform_scene(s, kind, steering, &cfg.benchmark)?;
                let out = output_dir(&scenes, d)?;
                io::write_wav(&out.join("est.wav"), &[&est], s.record.sample_rate)?;
                let m = corpus::score(s, &est)?;
                let (az, el) = dir.to_degrees();
                write_json(
                    &out.join("metrics.json"),
                    &ItemMetrics {
                        scene: scene_name(d),
                        method: kname,
                        steer: Some(sname),
                        azimuth_deg: Some(az),
                        elevation_deg: Some(el),
                        metrics: m,
                    },
                )?;
                println!("{}: SI-SDRi {:+.2} dB, STOI {:.3}", scene_name(d), m.si_sdri, m.stoi);
                Ok(())
            })?;
        }
        Command::Extract {
            scenes,
            mask: which,
            dump,
        } => {
            let dirs = scene_dirs(&scenes)?;
            let name = match which {
                MaskArg::Irm => "irm",
                MaskArg::Ibm => "ibm",
            };
            for_each_scene(&dirs, |d, s| {
                let stft_cfg = StftConfig {
                    sample_rate: s.record.sample_rate,
                    ..StftConfig::default()
                };
                let target = dsp::stft(&s.reference, &stft_cfg)?;
                let mix = dsp::stft(&s.mixture[0], &stft_cfg)?;
                let m = match which {
                    MaskArg::Irm => mask::ideal_ratio_mask(&target, &mix, cfg.benchmark.irm_exponent)?,
                    MaskArg::Ibm => mask::ideal_binary_mask(&target, &mix, cfg.benchmark.ibm_threshold_db)?,
                };
                let est = mask::apply_mask(&m, &mix)?;
                let out = output_dir(&scenes, d)?;
                io::write_wav(&out.join("est.wav"), &[&est], s.record.sample_rate)?;
                if dump {
                    io::write_mask(&out.join("mask.tbt"), &m)?;
                    io::write_spectrogram(&out.join("mix_ref.tbt"), &mix)?;
                }
                let r = corpus::score(s, &est)?;
                write_json(
                    &out.join("metrics.json"),
                    &ItemMetrics {
                        scene: scene_name(d),
                        method: name,
                        steer: None,
                        azimuth_deg: None,
                        elevation_deg: None,
                        metrics: r,
                    },
                )?;
                println!("{}: SI-SDRi {:+.2} dB, STOI {:.3}", scene_name(d), r.si_sdri, r.stoi);
                Ok(())
            })?;
        }
        Command::Eval {
            corpus: dir,
            methods,
            out,
        } => {
            if !methods.is_empty() {
                cfg.benchmark.methods = methods
                    .iter()
                    .map(|m| m.parse::<Method>())
                    .collect::<tetrabench::Result<_>>()?;
            }
            let report = corpus::run_benchmark(&dir, &cfg.benchmark, workers)?;
            let path = out.unwrap_or_else(|| dir.join("results.json"));
            fs::write(&path, report.to_json()?)?;
            info!("results written to {}", path.display());
            print!("{}", corpus::render_text(&report));
            let failed = report.failures();
            if failed > 0 {
                bail!("{failed} item evaluations failed");
            }
        }
        Command::Report { results, json } => {
            let text = fs::read_to_string(&results).with_context(|| format!("reading {}", results.display()))?;
            let report = BenchmarkReport::from_json(&text)?.recomputed();
            print!("{}", corpus::render_text(&report));
            if let Some(p) = json {
                fs::write(p, report.to_json()?)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
