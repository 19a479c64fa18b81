//! Corpus synthesis, the benchmark runner and report tables.
//!
//! A corpus directory holds `manifest.json` plus one `scene_NNNNN/`
//! directory per item with `mix.wav` (4 channels), `target_ref.wav` (target
//! image at mic 0) and `scene.json`. Every item draws from its own RNG
//! stream seeded from `(master_seed, index)`, and results are collected by
//! index, so outputs do not depend on the worker count.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beamform::{self, DEFAULT_LOADING};
use crate::dsp::{self, StftConfig};
use crate::error::{Error, Result};
use crate::geometry::{ArrayGeometry, Direction, Vec3, SPEED_OF_SOUND};
use crate::io::{read_wav, write_wav};
use crate::mask;
use crate::metrics::{self, BinSummary, GroupSummary, MetricsReport, SnrBin};
use crate::roomsim::{self, RoomSpec, SceneDistribution, SourcePlacement};
use crate::spatial;
use crate::speech::{self, SpeechParams};

pub const SCHEMA_VERSION: u32 = 1;
/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "TETRABENCH_WORKERS";
pub const MANIFEST_FILE: &str = "manifest.json";
/// Attempts per item before synthesis gives up on it.
pub const MAX_ITEM_ATTEMPTS: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Base,
    Cl1,
    Hard,
}

impl Regime {
    /// Mixing SNR range in dB.
    pub fn snr_range(&self) -> (f64, f64) {
        match self {
            Regime::Base => (5.0, 20.0),
            Regime::Cl1 => (1.0, 10.0),
            Regime::Hard => (-1.0, 10.0),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Regime::Base => "base",
            Regime::Cl1 => "cl1",
            Regime::Hard => "hard",
        }
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Regime::Base),
            "cl1" => Ok(Regime::Cl1),
            "hard" | "cl2" => Ok(Regime::Hard),
            _ => Err(Error::InvalidConfig(format!("unknown regime {s:?} (base, cl1, hard)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub n: usize,
    pub regime: Regime,
    pub master_seed: u64,
    pub clip_seconds: f64,
    /// Sensor noise relative to the mixture RMS, in dB; `None` for none.
    pub noise_floor_db: Option<f64>,
    /// Also store the 4-channel target image, needed only by the
    /// oracle-interference MVDR diagnostic.
    pub write_target_image: bool,
    pub scene: SceneDistribution,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n: 200,
            regime: Regime::Hard,
            master_seed: 0,
            clip_seconds: 4.0,
            noise_floor_db: Some(-50.0),
            write_target_image: false,
            scene: SceneDistribution::default(),
        }
    }
}

/// Worker count from [`WORKERS_ENV`], if set to a positive integer.
pub fn workers_from_env() -> Option<usize> {
    let v = std::env::var(WORKERS_ENV).ok()?;
    match v.trim().parse::<usize>() {
        Ok(n) if n > 0 => Some(n),
        _ => {
            warn!("ignoring {WORKERS_ENV}={v:?}: expected a positive integer");
            None
        }
    }
}

/// Runs `f` on a pool of `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of item `index`; attempts after the first re-mix the seed.
pub fn item_seed(master_seed: u64, index: usize, attempt: u64) -> u64 {
    splitmix64(splitmix64(master_seed ^ splitmix64(index as u64)) ^ attempt)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementRecord {
    pub position: Vec3,
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub distance_m: f64,
}

impl PlacementRecord {
    fn from_placement(p: &SourcePlacement) -> Self {
        let (az, el) = p.direction_from_array.to_degrees();
        Self {
            position: p.position,
            azimuth_deg: az,
            elevation_deg: el,
            distance_m: p.distance,
        }
    }

    pub fn direction(&self) -> Direction {
        Direction::from_degrees(self.azimuth_deg, self.elevation_deg)
    }
}

/// Contents of `scene.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub index: usize,
    pub seed: u64,
    pub regime: Regime,
    pub snr_db: f64,
    pub sample_rate: u32,
    pub num_samples: usize,
    pub room: RoomSpec,
    pub array_center: Vec3,
    pub mic_positions: Vec<Vec3>,
    pub speed_of_sound: f64,
    pub target: PlacementRecord,
    pub interferer: PlacementRecord,
    pub interferer_gain: f64,
    pub noise_floor_db: Option<f64>,
    pub target_source: String,
    pub interferer_source: String,
}

impl SceneRecord {
    pub fn geometry(&self) -> Result<ArrayGeometry> {
        ArrayGeometry::new(self.mic_positions.clone(), self.sample_rate, self.speed_of_sound)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeRecord {
    pub name: Regime,
    pub snr_min_db: f64,
    pub snr_max_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceEntry {
    pub path: String,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub index: usize,
    pub seed: u64,
    pub scene: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub schema_version: u32,
    pub master_seed: u64,
    pub count: usize,
    pub regime: RegimeRecord,
    pub config: CorpusConfig,
    /// Empty when the built-in synthetic sources were used.
    pub sources: Vec<SourceEntry>,
    pub items: Vec<ManifestItem>,
}

fn to_json_bytes<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

impl CorpusManifest {
    pub fn to_json(&self) -> Result<String> {
        to_json_bytes(self)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join(MANIFEST_FILE), self.to_json()?)?;
        Ok(())
    }

    /// Reads `manifest.json` and checks that every listed item exists.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text =
            fs::read_to_string(&path).map_err(|e| Error::Corpus(format!("cannot read {}: {e}", path.display())))?;
        let m: CorpusManifest = serde_json::from_str(&text)?;
        if m.items.len() != m.count {
            return Err(Error::Corpus(format!(
                "manifest lists {} items but count is {}",
                m.items.len(),
                m.count
            )));
        }
        for item in &m.items {
            let scene = dir.join(&item.scene);
            let parent = scene.parent().unwrap_or(dir);
            for f in [scene.clone(), parent.join("mix.wav"), parent.join("target_ref.wav")] {
                if !f.is_file() {
                    return Err(Error::Corpus(format!("missing {}", f.display())));
                }
            }
        }
        Ok(m)
    }

    pub fn scene_dir(&self, corpus: &Path, index: usize) -> PathBuf {
        let scene = corpus.join(&self.items[index].scene);
        scene
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| corpus.to_path_buf())
    }
}

struct SourceAudio {
    name: String,
    samples: Vec<f64>,
}

/// Every `.wav` in `dir` (sorted by name), mixed to mono at `fs`. Files
/// shorter than `min_len` samples are skipped.
fn load_sources(dir: &Path, fs_out: u32, min_len: usize) -> Result<Vec<SourceAudio>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Corpus(format!("cannot list {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        let (chans, fs_in) = read_wav(&p)?;
        let n = chans.len().max(1) as f64;
        let len = chans.first().map(Vec::len).unwrap_or(0);
        let mono: Vec<f64> = (0..len).map(|i| chans.iter().map(|c| c[i]).sum::<f64>() / n).collect();
        let mono = metrics::resample(&mono, fs_in, fs_out);
        if mono.len() < min_len {
            warn!("skipping {}: shorter than the clip length", p.display());
            continue;
        }
        out.push(SourceAudio {
            name: p
                .file_name()
                .map(|f| f.to_string_lossy().into_owned())
                .unwrap_or_default(),
            samples: mono,
        });
    }
    if out.len() < 2 {
        return Err(Error::Corpus(format!(
            "{} holds {} usable source files; at least 2 are needed",
            dir.display(),
            out.len()
        )));
    }
    Ok(out)
}

struct SynthItem {
    record: SceneRecord,
    recording: roomsim::SceneRecording,
}

fn synth_item(cfg: &CorpusConfig, index: usize, sources: &[SourceAudio]) -> Result<SynthItem> {
    let geometry = ArrayGeometry::default_tetrahedron();
    let fs = cfg.scene.sample_rate;
    let len = (cfg.clip_seconds * fs as f64).round() as usize;
    let (lo, hi) = cfg.regime.snr_range();
    let mut last_err = None;
    for attempt in 0..MAX_ITEM_ATTEMPTS {
        let seed = item_seed(cfg.master_seed, index, attempt);
        let draw = match roomsim::sample_scene(seed, &cfg.scene) {
            Ok(d) => d,
            Err(e) => {
                last_err = Some(e);
                continue;
            }
        };
        // separate stream from the scene geometry draw
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let snr_db = rng.gen_range(lo..=hi);
        let (tsrc, isrc, tname, iname) = if sources.is_empty() {
            let p = SpeechParams {
                sample_rate: fs,
                duration_s: cfg.clip_seconds,
                ..SpeechParams::default()
            };
            let t = speech::synth_speech(&p, &mut rng);
            let u = speech::synth_speech(&p, &mut rng);
            (t, u, "synthetic".to_string(), "synthetic".to_string())
        } else {
            let ti = rng.gen_range(0..sources.len());
            let mut ui = rng.gen_range(0..sources.len() - 1);
            if ui >= ti {
                ui += 1;
            }
            let t = roomsim::clip_source(&sources[ti].samples, len, &mut rng)?;
            let u = roomsim::clip_source(&sources[ui].samples, len, &mut rng)?;
            (t, u, sources[ti].name.clone(), sources[ui].name.clone())
        };
        let rec = match roomsim::render_scene(&draw, &geometry, &tsrc, &isrc, snr_db, cfg.noise_floor_db, &mut rng) {
            Ok(r) => r,
            Err(e) => {
                warn!("item {index} attempt {attempt}: {e}");
                last_err = Some(e);
                continue;
            }
        };
        let record = SceneRecord {
            index,
            seed,
            regime: cfg.regime,
            snr_db: rec.snr_db,
            sample_rate: fs,
            num_samples: len,
            room: draw.room,
            array_center: draw.array_center,
            mic_positions: geometry.placed_at(draw.array_center),
            speed_of_sound: SPEED_OF_SOUND,
            target: PlacementRecord::from_placement(&draw.target),
            interferer: PlacementRecord::from_placement(&draw.interferer),
            interferer_gain: rec.interferer_gain,
            noise_floor_db: cfg.noise_floor_db,
            target_source: tname,
            interferer_source: iname,
        };
        return Ok(SynthItem { record, recording: rec });
    }
    Err(Error::Corpus(format!(
        "item {index} failed after {MAX_ITEM_ATTEMPTS} attempts: {}",
        last_err.map(|e| e.to_string()).unwrap_or_default()
    )))
}

pub fn scene_dir_name(index: usize) -> String {
    format!("scene_{index:05}")
}

/// Synthesizes `cfg.n` scenes into `out` using the WAVs in `sources`, or the
/// built-in speech-like generator when `sources` is `None`.
pub fn synth_corpus(cfg: &CorpusConfig, sources: Option<&Path>, out: &Path, workers: usize) -> Result<CorpusManifest> {
    if !(cfg.clip_seconds > 0.0) {
        return Err(Error::InvalidConfig("clip_seconds must be positive".into()));
    }
    let fs = cfg.scene.sample_rate;
    let len = (cfg.clip_seconds * fs as f64).round() as usize;
    let audio = match sources {
        Some(dir) => load_sources(dir, fs, len)?,
        None => Vec::new(),
    };
    fs::create_dir_all(out)?;
    let results: Vec<Result<ManifestItem>> = with_workers(workers, || {
        (0..cfg.n)
            .into_par_iter()
            .map(|i| {
                let item = synth_item(cfg, i, &audio)?;
                let name = scene_dir_name(i);
                let dir = out.join(&name);
                fs::create_dir_all(&dir)?;
                write_wav(&dir.join("mix.wav"), &item.recording.mixture, fs)?;
                write_wav(&dir.join("target_ref.wav"), &[&item.recording.clean_reference], fs)?;
                if cfg.write_target_image {
                    write_wav(&dir.join("target_image.wav"), &item.recording.target_reverberant, fs)?;
                }
                fs::write(dir.join("scene.json"), to_json_bytes(&item.record)?)?;
                Ok(ManifestItem {
                    index: i,
                    seed: item.record.seed,
                    scene: format!("{name}/scene.json"),
                })
            })
            .collect()
    })?;
    let items = results.into_iter().collect::<Result<Vec<_>>>()?;
    let (lo, hi) = cfg.regime.snr_range();
    let manifest = CorpusManifest {
        schema_version: SCHEMA_VERSION,
        master_seed: cfg.master_seed,
        count: items.len(),
        regime: RegimeRecord {
            name: cfg.regime,
            snr_min_db: lo,
            snr_max_db: hi,
        },
        config: cfg.clone(),
        sources: audio
            .iter()
            .map(|a| SourceEntry {
                path: a.name.clone(),
                duration_s: a.samples.len() as f64 / fs as f64,
            })
            .collect(),
        items,
    };
    manifest.write(out)?;
    info!("wrote {} scenes to {}", manifest.count, out.display());
    Ok(manifest)
}

/// One scene directory loaded for processing.
#[derive(Debug, Clone)]
pub struct LoadedScene {
    pub record: SceneRecord,
    pub mixture: Vec<Vec<f64>>,
    pub reference: Vec<f64>,
    pub target_image: Option<Vec<Vec<f64>>>,
}

pub fn load_scene(dir: &Path) -> Result<LoadedScene> {
    let path = dir.join("scene.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::Corpus(format!("cannot read {}: {e}", path.display())))?;
    let record: SceneRecord =
        serde_json::from_str(&text).map_err(|e| Error::Corpus(format!("{}: {e}", path.display())))?;
    let (mixture, fs_mix) = read_wav(&dir.join("mix.wav"))?;
    let (mut reference, fs_ref) = read_wav(&dir.join("target_ref.wav"))?;
    if fs_mix != record.sample_rate || fs_ref != record.sample_rate {
        return Err(Error::Corpus(format!(
            "{}: sample rate differs from scene.json",
            dir.display()
        )));
    }
    if reference.len() != 1 || mixture.len() != record.mic_positions.len() {
        return Err(Error::Corpus(format!("{}: unexpected channel counts", dir.display())));
    }
    let image = dir.join("target_image.wav");
    let target_image = if image.is_file() {
        Some(read_wav(&image)?.0)
    } else {
        None
    };
    Ok(LoadedScene {
        record,
        mixture,
        reference: reference.remove(0),
        target_image,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mixture,
    DasOracle,
    MvdrOracle,
    DasEstimated,
    Irm,
    Ibm,
    /// MVDR with the covariance of the true interference plus noise; a
    /// diagnostic outside the headline table.
    MvdrOracleInterference,
}

impl Method {
    pub const HEADLINE: [Method; 6] = [
        Method::Mixture,
        Method::DasOracle,
        Method::MvdrOracle,
        Method::DasEstimated,
        Method::Irm,
        Method::Ibm,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Mixture => "mixture",
            Method::DasOracle => "das_oracle",
            Method::MvdrOracle => "mvdr_oracle",
            Method::DasEstimated => "das_estimated",
            Method::Irm => "irm",
            Method::Ibm => "ibm",
            Method::MvdrOracleInterference => "mvdr_oracle_interference",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::HEADLINE
            .iter()
            .chain(&[Method::MvdrOracleInterference])
            .find(|m| m.name() == s)
            .copied()
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub methods: Vec<Method>,
    pub loading: f64,
    pub irm_exponent: f64,
    pub ibm_threshold_db: f64,
    pub gcc_bins: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            methods: Method::HEADLINE.to_vec(),
            loading: DEFAULT_LOADING,
            irm_exponent: 1.0,
            ibm_threshold_db: 0.0,
            gcc_bins: spatial::DEFAULT_BINS,
        }
    }
}

/// Least-squares DOA from GCC-PHAT TDOAs of the mixture.
pub fn estimate_direction(scene: &LoadedScene, bins: usize) -> Result<spatial::DoaEstimate> {
    let g = scene.record.geometry()?;
    let f = spatial::gcc_features(&scene.mixture, &g, bins)?;
    spatial::doa_least_squares(&spatial::estimate_tdoas(&f), &g)
}

/// Single-channel estimate of the target image at mic 0.
pub fn estimate(method: Method, scene: &LoadedScene, cfg: &BenchmarkConfig) -> Result<Vec<f64>> {
    let g = scene.record.geometry()?;
    let stft_cfg = StftConfig {
        sample_rate: scene.record.sample_rate,
        ..StftConfig::default()
    };
    let oracle = scene.record.target.direction();
    match method {
        Method::Mixture => Ok(scene.mixture[0].clone()),
        Method::DasOracle => Ok(beamform_scene(scene, Beamformer::Das, Steering::Oracle, cfg)?.0),
        Method::DasEstimated => Ok(beamform_scene(scene, Beamformer::Das, Steering::Estimated, cfg)?.0),
        Method::MvdrOracle => Ok(beamform_scene(scene, Beamformer::Mvdr, Steering::Oracle, cfg)?.0),
        Method::MvdrOracleInterference => {
            let image = scene
                .target_image
                .as_ref()
                .ok_or_else(|| Error::Corpus("oracle-interference MVDR needs target_image.wav".into()))?;
            let residual: Vec<Vec<f64>> = scene
                .mixture
                .iter()
                .zip(image)
                .map(|(x, s)| x.iter().zip(s).map(|(a, b)| a - b).collect())
                .collect();
            beamform::mvdr_beamform(&scene.mixture, &residual, &g, oracle, &stft_cfg, cfg.loading)
        }
        Method::Irm | Method::Ibm => {
            let s = dsp::stft(&scene.reference, &stft_cfg)?;
            let x = dsp::stft(&scene.mixture[0], &stft_cfg)?;
            let m = if method == Method::Irm {
                mask::ideal_ratio_mask(&s, &x, cfg.irm_exponent)?
            } else {
                mask::ideal_binary_mask(&s, &x, cfg.ibm_threshold_db)?
            };
            mask::apply_mask(&m, &x)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Beamformer {
    Das,
    Mvdr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Steering {
    Oracle,
    Estimated,
}

/// Beamformer output and the direction it was steered to.
pub fn beamform_scene(
    scene: &LoadedScene,
    kind: Beamformer,
    steer: Steering,
    cfg: &BenchmarkConfig,
) -> Result<(Vec<f64>, Direction)> {
    let g = scene.record.geometry()?;
    let dir = match steer {
        Steering::Oracle => scene.record.target.direction(),
        Steering::Estimated => estimate_direction(scene, cfg.gcc_bins)?.direction,
    };
    let out = match kind {
        Beamformer::Das => beamform::das(&scene.mixture, &g, dir)?,
        Beamformer::Mvdr => {
            let stft_cfg = StftConfig {
                sample_rate: scene.record.sample_rate,
                ..StftConfig::default()
            };
            beamform::mvdr_beamform(&scene.mixture, &scene.mixture, &g, dir, &stft_cfg, cfg.loading)?
        }
    };
    Ok((out, dir))
}

/// Metrics of `estimate` against the scene's reference.
pub fn score(scene: &LoadedScene, estimate: &[f64]) -> Result<MetricsReport> {
    metrics::evaluate(
        &scene.reference,
        estimate,
        &scene.mixture[0],
        scene.record.snr_db,
        scene.record.sample_rate,
    )
}

pub fn evaluate_scene(method: Method, scene: &LoadedScene, cfg: &BenchmarkConfig) -> Result<MetricsReport> {
    score(scene, &estimate(method, scene, cfg)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub index: usize,
    pub snr_db: f64,
    pub metrics: Option<MetricsReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub count: usize,
    pub failed: usize,
    pub overall: GroupSummary,
    /// Present when every item falls in the stratified SNR range.
    pub bins: Option<Vec<BinSummary>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub method: Method,
    pub summary: MethodSummary,
    pub items: Vec<ItemResult>,
    /// Not serialized, so reports stay byte-identical across runs.
    #[serde(skip)]
    pub wall_clock_s: f64,
}

/// Summary statistics recomputed from per-item rows.
pub fn summarize(items: &[ItemResult]) -> MethodSummary {
    let ok: Vec<&MetricsReport> = items.iter().filter_map(|i| i.metrics.as_ref()).collect();
    let reports: Vec<MetricsReport> = ok.iter().map(|r| **r).collect();
    let snr: Vec<f64> = reports.iter().map(|r| r.snr_db).collect();
    MethodSummary {
        count: ok.len(),
        failed: items.len() - ok.len(),
        overall: GroupSummary::of(&ok),
        bins: metrics::stratify(&reports, &snr).ok().map(|s| s.bins),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusInfo {
    pub master_seed: u64,
    pub count: usize,
    pub regime: Regime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub schema_version: u32,
    pub corpus: CorpusInfo,
    pub config: BenchmarkConfig,
    pub results: Vec<BenchmarkResult>,
}

impl BenchmarkReport {
    pub fn to_json(&self) -> Result<String> {
        to_json_bytes(self)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Copy with every summary recomputed from the per-item rows.
    pub fn recomputed(&self) -> Self {
        let mut r = self.clone();
        for res in &mut r.results {
            res.summary = summarize(&res.items);
        }
        r
    }

    pub fn result(&self, method: Method) -> Option<&BenchmarkResult> {
        self.results.iter().find(|r| r.method == method)
    }

    pub fn failures(&self) -> usize {
        self.results.iter().map(|r| r.summary.failed).sum()
    }
}

/// Scores every item of the corpus with every configured method.
pub fn run_benchmark(corpus: &Path, cfg: &BenchmarkConfig, workers: usize) -> Result<BenchmarkReport> {
    let manifest = CorpusManifest::load(corpus)?;
    let start = Instant::now();
    let rows: Vec<Vec<ItemResult>> = with_workers(workers, || {
        (0..manifest.count)
            .into_par_iter()
            .map(|i| {
                let index = manifest.items[i].index;
                let scene = load_scene(&manifest.scene_dir(corpus, i));
                cfg.methods
                    .iter()
                    .map(|&m| {
                        let (snr_db, outcome) = match &scene {
                            Ok(s) => (s.record.snr_db, evaluate_scene(m, s, cfg)),
                            Err(e) => (f64::NAN, Err(Error::Corpus(e.to_string()))),
                        };
                        match outcome {
                            Ok(r) => ItemResult {
                                index,
                                snr_db,
                                metrics: Some(r),
                                error: None,
                            },
                            Err(e) => {
                                warn!("item {index} {}: {e}", m.name());
                                ItemResult {
                                    index,
                                    snr_db,
                                    metrics: None,
                                    error: Some(e.to_string()),
                                }
                            }
                        }
                    })
                    .collect()
            })
            .collect()
    })?;
    let elapsed = start.elapsed().as_secs_f64();
    let results = cfg
        .methods
        .iter()
        .enumerate()
        .map(|(k, &m)| {
            let items: Vec<ItemResult> = rows.iter().map(|r| r[k].clone()).collect();
            BenchmarkResult {
                method: m,
                summary: summarize(&items),
                items,
                wall_clock_s: elapsed,
            }
        })
        .collect();
    Ok(BenchmarkReport {
        schema_version: SCHEMA_VERSION,
        corpus: CorpusInfo {
            master_seed: manifest.master_seed,
            count: manifest.count,
            regime: manifest.regime.name,
        },
        config: cfg.clone(),
        results,
    })
}

fn fmt_stat(s: &metrics::Stat) -> String {
    match (s.mean, s.std) {
        (Some(m), Some(d)) => format!("{m:7.2} ± {d:5.2}"),
        _ => format!("{:>15}", "-"),
    }
}

/// Method × metric table followed by the per-SNR-bin SI-SDRi table.
pub fn render_text(report: &BenchmarkReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "corpus: regime {} | seed {} | {} items",
        report.corpus.regime.name(),
        report.corpus.master_seed,
        report.corpus.count
    );
    let _ = writeln!(
        out,
        "{:<26} {:>5} {:>15} {:>15} {:>15} {:>15}",
        "method", "N", "SI-SDR (dB)", "SI-SDRi (dB)", "SDR (dB)", "STOI"
    );
    for r in &report.results {
        let s = &r.summary;
        let _ = writeln!(
            out,
            "{:<26} {:>5} {} {} {} {}",
            r.method.name(),
            s.count,
            fmt_stat(&s.overall.si_sdr),
            fmt_stat(&s.overall.si_sdri),
            fmt_stat(&s.overall.sdr),
            fmt_stat(&s.overall.stoi)
        );
    }
    if report.results.iter().any(|r| r.summary.bins.is_some()) {
        let _ = writeln!(out);
        let _ = writeln!(out, "SI-SDRi (dB) by input SNR bin");
        let mut header = format!("{:<26}", "method");
        for b in SnrBin::ALL {
            let _ = write!(header, " {:>15}", b.label());
        }
        let _ = writeln!(out, "{header}");
        for r in &report.results {
            let Some(bins) = &r.summary.bins else { continue };
            let mut line = format!("{:<26}", r.method.name());
            for b in bins {
                let cell = match b.summary.si_sdri.mean {
                    Some(m) => format!("{m:.2}"),
                    None => "-".into(),
                };
                let _ = write!(line, " {:>15}", cell);
            }
            let _ = writeln!(out, "{line}");
        }
        if let Some(bins) = report.results.iter().find_map(|r| r.summary.bins.as_ref()) {
            let mut line = format!("{:<26}", "N");
            for b in bins {
                let _ = write!(line, " {:>15}", b.summary.count);
            }
            let _ = writeln!(out, "{line}");
        }
    }
    let failed = report.failures();
    if failed > 0 {
        let _ = writeln!(out, "\n{failed} item evaluations failed");
    }
    out
}
