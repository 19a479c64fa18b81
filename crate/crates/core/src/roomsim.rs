//! Shoebox room simulation with the image source method, scene sampling,
//! convolution and SNR-controlled mixing.
//!
//! The room occupies `[0, Lx] × [0, Ly] × [0, Lz]`. Walls share one energy
//! absorption coefficient, starting from Sabine's formula and refined for the
//! image-source decay of the room shape (see [`ism_absorption`]); each
//! reflection scales pressure by `sqrt(1 - alpha)`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, ArrayGeometry, Direction, Vec3};

/// Half-width of the windowed-sinc fractional-delay kernel (81 taps).
pub const SINC_HALF_WIDTH: usize = 40;
/// Reflections are simulated out to this multiple of the requested RT60.
pub const TAIL_FACTOR: f64 = 1.5;
const SABINE: f64 = 0.161;
/// Cutoff of the high-pass applied to reverberant RIRs.
pub const HIGHPASS_HZ: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoomSpec {
    pub dimensions: Vec3,
    pub rt60: f64,
    pub max_image_order: usize,
    pub sample_rate: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Absorption {
    pub alpha: f64,
    /// Smallest reflection order that reaches every image arriving within
    /// `TAIL_FACTOR * rt60`.
    pub image_order: usize,
}

impl Absorption {
    pub fn reflection_coefficient(&self) -> f64 {
        (1.0 - self.alpha).sqrt()
    }
}

impl RoomSpec {
    /// Room whose image order is chosen to cover the reverberant tail.
    pub fn with_rt60(dimensions: Vec3, rt60: f64, sample_rate: u32) -> Result<Self> {
        let mut room = RoomSpec {
            dimensions,
            rt60,
            max_image_order: 0,
            sample_rate,
        };
        room.max_image_order = rt60_to_absorption(&room)?.image_order;
        Ok(room)
    }

    pub fn volume(&self) -> f64 {
        let [x, y, z] = self.dimensions;
        x * y * z
    }

    pub fn surface_area(&self) -> f64 {
        let [x, y, z] = self.dimensions;
        2.0 * (x * y + x * z + y * z)
    }

    /// Strictly inside, at least `margin` meters from every wall.
    pub fn contains(&self, p: Vec3, margin: f64) -> bool {
        (0..3).all(|k| p[k] > margin && p[k] < self.dimensions[k] - margin)
    }
}

/// Uniform absorption from Sabine's formula, `alpha = 0.161 V / (rt60 S)`.
pub fn rt60_to_absorption(room: &RoomSpec) -> Result<Absorption> {
    let v = room.volume();
    let s = room.surface_area();
    if !(room.rt60 > 0.0) || !(v > 0.0) || !(s > 0.0) {
        return Err(Error::InvalidGeometry(format!(
            "rt60 {} and room {:?} must be positive",
            room.rt60, room.dimensions
        )));
    }
    let alpha = SABINE * v / (room.rt60 * s);
    if alpha >= 1.0 {
        return Err(Error::InfeasibleRt60 { rt60: room.rt60, alpha });
    }
    let reach = geometry::SPEED_OF_SOUND * TAIL_FACTOR * room.rt60;
    let inv = room.dimensions.iter().map(|l| 1.0 / (l * l)).sum::<f64>().sqrt();
    // a path of length r crosses at most r * |(1/Lx, 1/Ly, 1/Lz)| walls,
    // plus one boundary crossing per axis
    let image_order = (reach * inv).ceil() as usize + 3;
    Ok(Absorption {
        alpha: alpha.max(f64::MIN_POSITIVE),
        image_order,
    })
}

/// Absorption used by [`simulate_rir`]: Sabine's estimate refined so that
/// the image-source decay of this room shape has the requested T60.
///
/// Image sources along a direction `u` undergo `r * g(u)` reflections over
/// path length `r`, with `g(u) = |ux|/Lx + |uy|/Ly + |uz|/Lz`. Sabine uses the
/// directional mean of `g`, but the image-source decay is a mixture of
/// exponentials dominated late by grazing directions, so Sabine absorption
/// yields decays up to ~70% too long in elongated rooms. The absorption is
/// therefore iterated until the Schroeder T60 of the image energy histogram,
/// for two fixed source/receiver pairs in the room, matches `rt60`.
pub fn ism_absorption(room: &RoomSpec) -> Result<Absorption> {
    let sabine = rt60_to_absorption(room)?;
    let len = (TAIL_FACTOR * room.rt60 * room.sample_rate as f64).ceil() as usize;
    // decay time is roughly inversely proportional to -ln(1 - alpha)
    let mut k = -(1.0 - sabine.alpha).ln();
    let k_max = -(1e-9f64).ln();
    for _ in 0..8 {
        let alpha = 1.0 - (-k).exp();
        let Some(t60) = energy_t60(&image_energy(room, alpha, len), room.sample_rate) else {
            break;
        };
        let ratio = t60 / room.rt60;
        k = (k * ratio).min(k_max);
        if (ratio - 1.0).abs() < 0.005 {
            break;
        }
    }
    Ok(Absorption {
        alpha: (1.0 - (-k).exp()).max(f64::MIN_POSITIVE),
        ..sabine
    })
}

/// Image energy arriving per sample at two probe receivers, `len` samples.
fn image_energy(room: &RoomSpec, alpha: f64, len: usize) -> Vec<f64> {
    const PROBES: [([f64; 3], [f64; 3]); 2] = [
        ([0.31, 0.27, 0.42], [0.64, 0.58, 0.47]),
        ([0.73, 0.36, 0.61], [0.42, 0.69, 0.38]),
    ];
    let fs = room.sample_rate as f64;
    let to_samples = fs / geometry::SPEED_OF_SOUND;
    let reach = len as f64 / to_samples;
    let beta2 = 1.0 - alpha;
    let dims = room.dimensions;
    let bound = |l: f64| (reach / (2.0 * l)).ceil() as i64 + 1;
    let refl = |n: i64, q: i64| ((n - q).abs() + n.abs()) as i32;
    let mut energy = vec![0.0; len];
    for (sf, rf) in PROBES {
        let s: Vec3 = std::array::from_fn(|k| sf[k] * dims[k]);
        let r: Vec3 = std::array::from_fn(|k| rf[k] * dims[k]);
        // per-axis image offsets and reflection counts
        let axis = |k: usize| -> Vec<(f64, i32)> {
            let b = bound(dims[k]);
            (-b..=b)
                .flat_map(|n| {
                    (0..2).map(move |q| {
                        let i = 2.0 * n as f64 * dims[k] + (1 - 2 * q) as f64 * s[k];
                        (i - r[k], refl(n, q))
                    })
                })
                .filter(|(d, _)| d.abs() <= reach)
                .collect()
        };
        let (ax, ay, az) = (axis(0), axis(1), axis(2));
        for &(dx, ox) in &ax {
            for &(dy, oy) in &ay {
                let dxy = dx * dx + dy * dy;
                if dxy > reach * reach {
                    continue;
                }
                for &(dz, oz) in &az {
                    let d2 = dxy + dz * dz;
                    let idx = (d2.sqrt() * to_samples).round() as usize;
                    if idx < len {
                        energy[idx] += beta2.powi(ox + oy + oz) / d2;
                    }
                }
            }
        }
    }
    energy
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceRole {
    Target,
    Interferer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourcePlacement {
    pub position: Vec3,
    pub role: SourceRole,
    pub direction_from_array: Direction,
    pub distance: f64,
}

impl SourcePlacement {
    /// Placement at `position`, with direction and distance measured from
    /// the array centroid `array_center`.
    pub fn at(position: Vec3, role: SourceRole, array_center: Vec3) -> Self {
        let rel = geometry::sub(position, array_center);
        Self {
            position,
            role,
            direction_from_array: Direction::from_vector(rel).unwrap_or(Direction::new(0.0, 0.0)),
            distance: geometry::norm(rel),
        }
    }

    pub fn from_direction(direction: Direction, distance: f64, role: SourceRole, array_center: Vec3) -> Self {
        let position = geometry::add(array_center, geometry::scale(direction.unit_vector(), distance));
        Self {
            position,
            role,
            direction_from_array: direction,
            distance,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rir {
    /// One impulse response per mic, all the same length.
    pub taps: Vec<Vec<f64>>,
    /// Euclidean direct-path arrival per mic, in samples.
    pub direct_path_sample: Vec<f64>,
}

struct SincKernel {
    cos_k: Vec<f64>,
    sin_k: Vec<f64>,
}

impl SincKernel {
    fn new() -> Self {
        let w = SINC_HALF_WIDTH as f64 + 1.0;
        let ks = -(SINC_HALF_WIDTH as i64)..=SINC_HALF_WIDTH as i64;
        Self {
            cos_k: ks.clone().map(|k| (PI * k as f64 / w).cos()).collect(),
            sin_k: ks.map(|k| (PI * k as f64 / w).sin()).collect(),
        }
    }

    /// Adds `amp * hann(t) * sinc(t)` with `t = n - delay` around the nearest
    /// sample to `delay`.
    fn add(&self, out: &mut [f64], delay: f64, amp: f64) {
        let center = delay.round();
        let frac = delay - center;
        let w = SINC_HALF_WIDTH as f64 + 1.0;
        let (sw, cw) = (PI * frac / w).sin_cos();
        let half = SINC_HALF_WIDTH as i64;
        let c = center as i64;
        if frac.abs() < 1e-12 {
            if c >= 0 && (c as usize) < out.len() {
                out[c as usize] += amp;
            }
            return;
        }
        // sin(pi (k - frac)) = -(-1)^k sin(pi frac); fold the constant factors
        let g = -amp * (PI * frac).sin() / PI;
        let tap = |i: usize, k: i64| {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            // hann(t) = 0.5 (1 + cos(pi t / w)), expanded around integer k
            let window = 0.5 * (1.0 + self.cos_k[i] * cw + self.sin_k[i] * sw);
            g * sign * window / (k as f64 - frac)
        };
        let lo = c - half;
        if lo >= 0 && ((c + half) as usize) < out.len() {
            let dst = &mut out[lo as usize..=(c + half) as usize];
            for (i, v) in dst.iter_mut().enumerate() {
                *v += tap(i, i as i64 - half);
            }
        } else {
            for i in 0..=(2 * half) as usize {
                let n = lo + i as i64;
                if n >= 0 && (n as usize) < out.len() {
                    out[n as usize] += tap(i, i as i64 - half);
                }
            }
        }
    }
}

/// Image-source RIRs from `src` to every mic of `geometry` placed with its
/// centroid at `array_center`.
pub fn simulate_rir(
    room: &RoomSpec,
    src: &SourcePlacement,
    geometry: &ArrayGeometry,
    array_center: Vec3,
) -> Result<Rir> {
    // no reflections, so no absorption to calibrate (or to reject)
    let beta = if room.max_image_order == 0 {
        1.0
    } else {
        ism_absorption(room)?.reflection_coefficient()
    };
    let mics = geometry.placed_at(array_center);
    if !room.contains(src.position, 0.0) {
        return Err(Error::Placement(format!(
            "source at {:?} is outside room {:?}",
            src.position, room.dimensions
        )));
    }
    if let Some(m) = mics.iter().position(|&m| !room.contains(m, 0.0)) {
        return Err(Error::Placement(format!("mic {m} is outside the room")));
    }
    let fs = room.sample_rate as f64;
    let c = geometry.speed_of_sound();
    let to_samples = fs / c;
    let direct: Vec<f64> = mics
        .iter()
        .map(|&m| geometry::distance(src.position, m) * to_samples)
        .collect();
    let max_direct = direct.iter().cloned().fold(0.0, f64::max);
    let min_len = max_direct.ceil() as usize + SINC_HALF_WIDTH + 2;
    let len = if room.max_image_order == 0 {
        min_len
    } else {
        ((TAIL_FACTOR * room.rt60 * fs).ceil() as usize).max(min_len)
    };
    // images later than this never touch the buffer
    let max_delay = (len + SINC_HALF_WIDTH) as f64;
    let reach = max_delay / to_samples + geometry.max_pair_distance();
    let order = room.max_image_order as i64;

    let kernel = SincKernel::new();
    let mut taps = vec![vec![0.0; len]; mics.len()];
    let [lx, ly, lz] = room.dimensions;
    let [sx, sy, sz] = src.position;
    let [cx, cy, cz] = array_center;
    let bound = |l: f64| (reach / (2.0 * l)).ceil() as i64 + 1;
    let (bx, by, bz) = (bound(lx), bound(ly), bound(lz));
    let refl = |n: i64, q: i64| (n - q).abs() + n.abs();

    for nx in -bx..=bx {
        for qx in 0..2 {
            let ox = refl(nx, qx);
            if ox > order {
                continue;
            }
            let ix = 2.0 * nx as f64 * lx + (1 - 2 * qx) as f64 * sx;
            let dx = ix - cx;
            if dx.abs() > reach {
                continue;
            }
            for ny in -by..=by {
                for qy in 0..2 {
                    let oy = ox + refl(ny, qy);
                    if oy > order {
                        continue;
                    }
                    let iy = 2.0 * ny as f64 * ly + (1 - 2 * qy) as f64 * sy;
                    let dy = iy - cy;
                    if dx * dx + dy * dy > reach * reach {
                        continue;
                    }
                    for nz in -bz..=bz {
                        for qz in 0..2 {
                            let oz = oy + refl(nz, qz);
                            if oz > order {
                                continue;
                            }
                            let iz = 2.0 * nz as f64 * lz + (1 - 2 * qz) as f64 * sz;
                            let dz = iz - cz;
                            if dx * dx + dy * dy + dz * dz > reach * reach {
                                continue;
                            }
                            let gain = beta.powi(oz as i32);
                            for (m, mic) in mics.iter().enumerate() {
                                let d = geometry::distance([ix, iy, iz], *mic);
                                let delay = d * to_samples;
                                if delay > max_delay {
                                    continue;
                                }
                                kernel.add(&mut taps[m], delay, gain / (4.0 * PI * d));
                            }
                        }
                    }
                }
            }
        }
    }
    if order > 0 {
        for h in &mut taps {
            highpass(h, HIGHPASS_HZ, fs);
        }
    }
    Ok(Rir {
        taps,
        direct_path_sample: direct,
    })
}

/// Second-order Butterworth high-pass, applied in place.
///
/// Every image adds a positive pulse, so in the dense tail the low-frequency
/// content sums coherently and grows against the incoherent energy, which
/// stretches the measured decay. Removing it restores the exponential tail.
fn highpass(x: &mut [f64], fc: f64, fs: f64) {
    let (sn, cs) = (2.0 * PI * fc / fs).sin_cos();
    let a = sn * std::f64::consts::FRAC_1_SQRT_2;
    let a0 = 1.0 + a;
    let b0 = 0.5 * (1.0 + cs) / a0;
    let b1 = -2.0 * b0;
    let a1 = -2.0 * cs / a0;
    let a2 = (1.0 - a) / a0;
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    for v in x.iter_mut() {
        let y = b0 * (*v + x2) + b1 * x1 - a1 * y1 - a2 * y2;
        x2 = x1;
        x1 = *v;
        y2 = y1;
        y1 = y;
        *v = y;
    }
}

/// Backward-integrated energy decay curve in dB, normalized to 0 dB at the
/// first sample.
pub fn schroeder_curve(h: &[f64]) -> Vec<f64> {
    let energy: Vec<f64> = h.iter().map(|v| v * v).collect();
    energy_decay_curve(&energy)
}

fn energy_decay_curve(energy: &[f64]) -> Vec<f64> {
    let mut edc = vec![0.0; energy.len()];
    let mut acc = 0.0;
    for i in (0..energy.len()).rev() {
        acc += energy[i];
        edc[i] = acc;
    }
    let total = edc.first().copied().unwrap_or(0.0);
    if !(total > 0.0) {
        return vec![f64::NEG_INFINITY; energy.len()];
    }
    edc.iter().map(|e| 10.0 * (e / total).log10()).collect()
}

/// T60 from a least-squares line through the Schroeder curve between -5 and
/// -25 dB. Returns `None` when the curve never reaches -25 dB.
pub fn estimate_t60(h: &[f64], sample_rate: u32) -> Option<f64> {
    t20_fit(&schroeder_curve(h), sample_rate)
}

fn energy_t60(energy: &[f64], sample_rate: u32) -> Option<f64> {
    t20_fit(&energy_decay_curve(energy), sample_rate)
}

fn t20_fit(curve: &[f64], sample_rate: u32) -> Option<f64> {
    let start = curve.iter().position(|&v| v <= -5.0)?;
    let end = curve.iter().position(|&v| v <= -25.0)?;
    if end <= start + 1 {
        return None;
    }
    let fs = sample_rate as f64;
    let n = (end - start + 1) as f64;
    let (mut st, mut sy, mut stt, mut sty) = (0.0, 0.0, 0.0, 0.0);
    for (i, &y) in curve.iter().enumerate().take(end + 1).skip(start) {
        let t = i as f64 / fs;
        st += t;
        sy += y;
        stt += t * t;
        sty += t * y;
    }
    let slope = (n * sty - st * sy) / (n * stt - st * st);
    if !(slope < 0.0) {
        return None;
    }
    Some(-60.0 / slope)
}

/// Parameter ranges for random scenes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneDistribution {
    pub room_min: Vec3,
    pub room_max: Vec3,
    pub rt60_min: f64,
    pub rt60_max: f64,
    pub rt60_mean: f64,
    pub azimuth_deg: (f64, f64),
    pub elevation_deg: (f64, f64),
    pub distance_m: (f64, f64),
    pub array_wall_margin: f64,
    pub source_wall_margin: f64,
    pub min_separation: f64,
    /// `None` uses the order derived from the RT60.
    pub max_image_order: Option<usize>,
    pub sample_rate: u32,
}

impl Default for SceneDistribution {
    fn default() -> Self {
        Self {
            room_min: [4.0, 3.5, 2.5],
            room_max: [10.0, 8.0, 3.5],
            rt60_min: 0.19,
            rt60_max: 0.82,
            rt60_mean: 0.38,
            azimuth_deg: (-45.0, 45.0),
            elevation_deg: (-20.0, 20.0),
            distance_m: (0.8, 1.5),
            array_wall_margin: 0.5,
            source_wall_margin: 0.1,
            min_separation: 0.5,
            max_image_order: None,
            sample_rate: 16_000,
        }
    }
}

impl SceneDistribution {
    /// Anechoic variant: image order 0.
    pub fn anechoic() -> Self {
        Self {
            max_image_order: Some(0),
            ..Self::default()
        }
    }
}

/// Exponential density truncated to `[lo, hi]`, parameterized by its mean.
#[derive(Debug, Clone, Copy)]
struct TruncatedExp {
    lo: f64,
    hi: f64,
    rate: f64,
}

impl TruncatedExp {
    fn with_mean(lo: f64, hi: f64, mean: f64) -> Self {
        let width = hi - lo;
        let target = (mean - lo).clamp(1e-9 * width, 0.5 * width);
        // mean offset of Exp(rate) truncated to [0, width]; decreasing in rate
        let offset = |r: f64| {
            if r < 1e-9 {
                0.5 * width
            } else {
                1.0 / r - width / (r * width).exp_m1()
            }
        };
        let (mut a, mut b) = (0.0, 1e6 / width);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if offset(m) > target {
                a = m;
            } else {
                b = m;
            }
        }
        Self {
            lo,
            hi,
            rate: 0.5 * (a + b),
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        let width = self.hi - self.lo;
        if self.rate < 1e-9 {
            return self.lo + u * width;
        }
        let x = -(1.0 - u * (1.0 - (-self.rate * width).exp())).ln() / self.rate;
        (self.lo + x).min(self.hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDraw {
    pub room: RoomSpec,
    pub target: SourcePlacement,
    pub interferer: SourcePlacement,
    /// Room position of the array centroid.
    pub array_center: Vec3,
    pub seed: u64,
}

pub const MAX_SCENE_DRAWS: usize = 10_000;

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

/// Deterministic scene from `seed`: room, RT60, array center, an in-view
/// target and a uniformly placed interferer.
pub fn sample_scene(seed: u64, dist: &SceneDistribution) -> Result<SceneDraw> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rt60_law = TruncatedExp::with_mean(dist.rt60_min, dist.rt60_max, dist.rt60_mean);
    for _ in 0..MAX_SCENE_DRAWS {
        let dims: Vec3 = std::array::from_fn(|k| uniform(&mut rng, (dist.room_min[k], dist.room_max[k])));
        let rt60 = rt60_law.sample(&mut rng);
        let mut room = RoomSpec {
            dimensions: dims,
            rt60,
            max_image_order: 0,
            sample_rate: dist.sample_rate,
        };
        let absorption = match rt60_to_absorption(&room) {
            Ok(a) => a,
            Err(Error::InfeasibleRt60 { .. }) => continue,
            Err(e) => return Err(e),
        };
        room.max_image_order = dist.max_image_order.unwrap_or(absorption.image_order);

        let m = dist.array_wall_margin;
        if dims.iter().any(|&l| l <= 2.0 * m) {
            continue;
        }
        let center: Vec3 = std::array::from_fn(|k| rng.gen_range(m..dims[k] - m));

        let az = uniform(&mut rng, dist.azimuth_deg);
        let el = uniform(&mut rng, dist.elevation_deg);
        let r = uniform(&mut rng, dist.distance_m);
        let target = SourcePlacement::from_direction(Direction::from_degrees(az, el), r, SourceRole::Target, center);
        let sm = dist.source_wall_margin;
        let ipos: Vec3 = std::array::from_fn(|k| rng.gen_range(sm..dims[k] - sm));
        if !room.contains(target.position, sm) {
            continue;
        }
        if geometry::distance(ipos, center) < dist.min_separation
            || geometry::distance(ipos, target.position) < dist.min_separation
        {
            continue;
        }
        let interferer = SourcePlacement::at(ipos, SourceRole::Interferer, center);
        return Ok(SceneDraw {
            room,
            target,
            interferer,
            array_center: center,
            seed,
        });
    }
    Err(Error::SamplingExhausted(MAX_SCENE_DRAWS))
}

/// Full linear convolution via FFT.
pub fn fft_convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return Vec::new();
    }
    let out_len = x.len() + h.len() - 1;
    let n = out_len.next_power_of_two();
    let mut planner = RealFftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut a = fwd.make_input_vec();
    a[..x.len()].copy_from_slice(x);
    let mut b = fwd.make_input_vec();
    b[..h.len()].copy_from_slice(h);
    let mut fa = fwd.make_output_vec();
    let mut fb = fwd.make_output_vec();
    fwd.process(&mut a, &mut fa).expect("fft buffer sizes match plan");
    fwd.process(&mut b, &mut fb).expect("fft buffer sizes match plan");
    for (u, v) in fa.iter_mut().zip(&fb) {
        *u *= v;
    }
    inv.process(&mut fa, &mut a).expect("fft buffer sizes match plan");
    let scale = 1.0 / n as f64;
    a.truncate(out_len);
    a.iter_mut().for_each(|v| *v *= scale);
    a
}

/// Convolves `source` with every RIR channel, keeping the first
/// `source.len()` samples.
pub fn convolve_rir(source: &[f64], rir: &Rir) -> Vec<Vec<f64>> {
    rir.taps
        .iter()
        .map(|h| {
            let mut y = fft_convolve(source, h);
            y.truncate(source.len());
            y
        })
        .collect()
}

/// Exact components of a mixed scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneRecording {
    pub mixture: Vec<Vec<f64>>,
    pub target_reverberant: Vec<Vec<f64>>,
    /// Interferer image after gain.
    pub interferer: Vec<Vec<f64>>,
    pub noise: Vec<Vec<f64>>,
    /// Target image at the reference channel.
    pub clean_reference: Vec<f64>,
    pub snr_db: f64,
    pub interferer_gain: f64,
}

pub const REFERENCE_CHANNEL: usize = 0;

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64
}

fn check_shapes(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<usize> {
    let len = a.first().map(Vec::len).unwrap_or(0);
    if a.is_empty() || a.len() != b.len() || a.iter().chain(b).any(|c| c.len() != len) {
        return Err(Error::Alignment(
            "target and interferer images must have equal channel counts and lengths".into(),
        ));
    }
    Ok(len)
}

/// `mixture = target + gain * interferer + noise`. Sensor noise is white
/// Gaussian at `noise_floor_db` relative to the RMS of the noiseless
/// mixture over all channels; `None` disables it.
pub fn mix_with_gain<R: Rng>(
    target: &[Vec<f64>],
    interferer: &[Vec<f64>],
    gain: f64,
    noise_floor_db: Option<f64>,
    rng: &mut R,
) -> Result<SceneRecording> {
    let len = check_shapes(target, interferer)?;
    let interf: Vec<Vec<f64>> = interferer
        .iter()
        .map(|c| c.iter().map(|v| gain * v).collect())
        .collect();
    let clean: Vec<Vec<f64>> = target
        .iter()
        .zip(&interf)
        .map(|(t, u)| t.iter().zip(u).map(|(a, b)| a + b).collect())
        .collect();
    let noise: Vec<Vec<f64>> = match noise_floor_db {
        Some(db) => {
            let rms = (clean.iter().map(|c| power(c)).sum::<f64>() / clean.len() as f64).sqrt();
            let sigma = rms * 10f64.powf(db / 20.0);
            (0..target.len())
                .map(|_| (0..len).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect())
                .collect()
        }
        None => vec![vec![0.0; len]; target.len()],
    };
    let mixture = clean
        .iter()
        .zip(&noise)
        .map(|(c, n)| c.iter().zip(n).map(|(a, b)| a + b).collect())
        .collect();
    let t_pow = power(&target[REFERENCE_CHANNEL]);
    let u_pow = power(&interf[REFERENCE_CHANNEL]);
    Ok(SceneRecording {
        mixture,
        target_reverberant: target.to_vec(),
        clean_reference: target[REFERENCE_CHANNEL].clone(),
        snr_db: 10.0 * (t_pow / u_pow).log10(),
        interferer: interf,
        noise,
        interferer_gain: gain,
    })
}

/// Scales the interferer so the reference-channel target-to-interferer power
/// ratio equals `snr_db`, then mixes.
pub fn mix_at_snr<R: Rng>(
    target: &[Vec<f64>],
    interferer: &[Vec<f64>],
    snr_db: f64,
    noise_floor_db: Option<f64>,
    rng: &mut R,
) -> Result<SceneRecording> {
    check_shapes(target, interferer)?;
    let t_pow = power(&target[REFERENCE_CHANNEL]);
    let u_pow = power(&interferer[REFERENCE_CHANNEL]);
    if !(t_pow > 0.0) {
        return Err(Error::DegenerateSource("target is silent on the reference channel"));
    }
    if !(u_pow > 0.0) {
        return Err(Error::DegenerateSource("interferer is silent on the reference channel"));
    }
    let gain = (t_pow / (u_pow * 10f64.powf(snr_db / 10.0))).sqrt();
    let mut rec = mix_with_gain(target, interferer, gain, noise_floor_db, rng)?;
    rec.snr_db = snr_db;
    Ok(rec)
}

/// Picks a `len`-sample excerpt at a random offset.
pub fn clip_source<R: Rng>(source: &[f64], len: usize, rng: &mut R) -> Result<Vec<f64>> {
    if source.len() < len {
        return Err(Error::DegenerateSource("source is shorter than the clip length"));
    }
    let offset = if source.len() > len {
        rng.gen_range(0..=source.len() - len)
    } else {
        0
    };
    Ok(source[offset..offset + len].to_vec())
}

/// Simulates both sources through the room and mixes them.
pub fn render_scene<R: Rng>(
    draw: &SceneDraw,
    geometry: &ArrayGeometry,
    target_source: &[f64],
    interferer_source: &[f64],
    snr_db: f64,
    noise_floor_db: Option<f64>,
    rng: &mut R,
) -> Result<SceneRecording> {
    let rt = simulate_rir(&draw.room, &draw.target, geometry, draw.array_center)?;
    let ri = simulate_rir(&draw.room, &draw.interferer, geometry, draw.array_center)?;
    let t = convolve_rir(target_source, &rt);
    let u = convolve_rir(interferer_source, &ri);
    mix_at_snr(&t, &u, snr_db, noise_floor_db, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn sabine_arithmetic() {
        // 5 x 5 x 4: V = 100, S = 2 (25 + 20 + 20) = 130
        let room = RoomSpec {
            dimensions: [5.0, 5.0, 4.0],
            rt60: 0.4,
            max_image_order: 0,
            sample_rate: 16000,
        };
        assert_eq!(room.volume(), 100.0);
        assert_eq!(room.surface_area(), 130.0);
        let a = rt60_to_absorption(&room).unwrap();
        assert!((a.alpha - 0.161 * 100.0 / (0.4 * 130.0)).abs() < 1e-12);
        assert!((a.alpha - 0.3096).abs() < 1e-4);
    }

    #[test]
    fn long_rt60_means_little_absorption() {
        let room = RoomSpec {
            dimensions: [5.0, 5.0, 4.0],
            rt60: 1e6,
            max_image_order: 0,
            sample_rate: 16000,
        };
        let a = rt60_to_absorption(&room).unwrap();
        assert!(a.alpha > 0.0 && a.alpha < 1e-6);
    }

    #[test]
    fn dead_room_is_infeasible() {
        let room = RoomSpec {
            dimensions: [10.0, 8.0, 3.5],
            rt60: 0.05,
            max_image_order: 0,
            sample_rate: 16000,
        };
        assert!(matches!(rt60_to_absorption(&room), Err(Error::InfeasibleRt60 { .. })));
    }

    #[test]
    fn anechoic_direct_peak() {
        let g = ArrayGeometry::default_tetrahedron();
        let room = RoomSpec {
            dimensions: [6.0, 5.0, 3.0],
            rt60: 0.4,
            max_image_order: 0,
            sample_rate: 16000,
        };
        let center = [3.0, 2.5, 1.5];
        let mic0 = g.placed_at(center)[0];
        let src = SourcePlacement::at(geometry::add(mic0, [1.0, 0.0, 0.0]), SourceRole::Target, center);
        let rir = simulate_rir(&room, &src, &g, center).unwrap();
        let expected = 1.0 / 343.0 * 16000.0;
        assert!((rir.direct_path_sample[0] - expected).abs() < 1e-9);
        assert!((expected - 46.6).abs() < 0.1);
        let h = &rir.taps[0];
        let (peak, amp) = h
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .unwrap();
        assert!((peak as f64 - expected).abs() <= 1.0);
        // the sinc peak is sampled 0.35 samples off center; amplitude stays
        // near 1 / (4 pi d)
        assert!(*amp < 1.0 / (4.0 * PI) && *amp > 0.5 / (4.0 * PI));
        let energy: f64 = h.iter().map(|v| v * v).sum();
        assert!((energy - (1.0 / (4.0 * PI)).powi(2)).abs() / energy < 0.02);
    }

    #[test]
    fn equidistant_mics_get_identical_rirs() {
        let g = ArrayGeometry::default_tetrahedron();
        let room = RoomSpec {
            dimensions: [6.0, 5.0, 3.0],
            rt60: 0.4,
            max_image_order: 0,
            sample_rate: 16000,
        };
        let center = [3.0, 2.5, 1.5];
        // mics 1 and 2 mirror each other across the x-z plane through center
        let src = SourcePlacement::from_direction(Direction::new(0.0, 0.2), 1.2, SourceRole::Target, center);
        let rir = simulate_rir(&room, &src, &g, center).unwrap();
        for (a, b) in rir.taps[1].iter().zip(&rir.taps[2]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn source_outside_room_fails() {
        let g = ArrayGeometry::default_tetrahedron();
        let room = RoomSpec::with_rt60([6.0, 5.0, 3.0], 0.3, 16000).unwrap();
        let src = SourcePlacement::at([7.0, 1.0, 1.0], SourceRole::Interferer, [3.0, 2.5, 1.5]);
        assert!(matches!(
            simulate_rir(&room, &src, &g, [3.0, 2.5, 1.5]),
            Err(Error::Placement(_))
        ));
    }

    #[test]
    fn schroeder_of_exponential_decay() {
        let fs = 16000;
        let t60 = 0.5;
        // pressure decays 60 dB in t60 seconds
        let h: Vec<f64> = (0..16000)
            .map(|n| 10f64.powf(-3.0 * n as f64 / (t60 * fs as f64)))
            .collect();
        let est = estimate_t60(&h, fs).unwrap();
        assert!((est - t60).abs() / t60 < 0.01, "{est}");
        let curve = schroeder_curve(&h);
        assert!(curve.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn sampling_is_deterministic() {
        let d = SceneDistribution::default();
        assert_eq!(sample_scene(0, &d).unwrap(), sample_scene(0, &d).unwrap());
        assert_ne!(sample_scene(0, &d).unwrap(), sample_scene(1, &d).unwrap());
    }

    #[test]
    fn truncated_exponential_mean() {
        let law = TruncatedExp::with_mean(0.19, 0.82, 0.38);
        let mut r = rng();
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| law.sample(&mut r)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        assert!((mean - 0.38).abs() < 0.005, "{mean}");
        assert!(xs.iter().all(|&x| (0.19..=0.82).contains(&x)));
    }

    #[test]
    fn snr_scaling() {
        let t = vec![vec![1.0, -1.0, 1.0, -1.0]; 2];
        let u = vec![vec![2.0, 2.0, -2.0, -2.0]; 2];
        let rec = mix_at_snr(&t, &u, 0.0, None, &mut rng()).unwrap();
        assert!((rec.interferer_gain - 0.5).abs() < 1e-15);
        let t = vec![vec![1.0, -1.0, 1.0, -1.0]; 2];
        let u = t.clone();
        let rec = mix_at_snr(&t, &u, 0.0, None, &mut rng()).unwrap();
        assert_eq!(rec.interferer_gain, 1.0);
        let rec = mix_at_snr(&t, &u, 10.0, None, &mut rng()).unwrap();
        let pt = power(&rec.target_reverberant[0]);
        let pu = power(&rec.interferer[0]);
        assert!((10.0 * (pt / pu).log10() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn silent_sources_are_rejected() {
        let t = vec![vec![0.0; 8]];
        let u = vec![vec![1.0; 8]];
        assert!(matches!(
            mix_at_snr(&t, &u, 0.0, None, &mut rng()),
            Err(Error::DegenerateSource(_))
        ));
        assert!(mix_at_snr(&u, &t, 0.0, None, &mut rng()).is_err());
    }

    #[test]
    fn zero_gain_reproduces_target() {
        let t = vec![vec![0.3, -0.1, 0.7], vec![0.2, 0.5, -0.9]];
        let u = vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]];
        let rec = mix_with_gain(&t, &u, 0.0, None, &mut rng()).unwrap();
        assert_eq!(rec.mixture, t);
    }

    #[test]
    fn noise_floor_level() {
        let t: Vec<Vec<f64>> = vec![(0..20000).map(|n| (n as f64 * 0.1).sin()).collect(); 4];
        let u = t.clone();
        let rec = mix_with_gain(&t, &u, 0.0, Some(-50.0), &mut rng()).unwrap();
        let pn: f64 = rec.noise.iter().map(|c| power(c)).sum::<f64>() / 4.0;
        let pc: f64 = t.iter().map(|c| power(c)).sum::<f64>() / 4.0;
        assert!((10.0 * (pn / pc).log10() + 50.0).abs() < 0.2);
    }

    #[test]
    fn convolution_matches_direct_sum() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let h = [0.5, -1.0, 0.25];
        let y = fft_convolve(&x, &h);
        let mut direct = vec![0.0; 6];
        for (i, a) in x.iter().enumerate() {
            for (j, b) in h.iter().enumerate() {
                direct[i + j] += a * b;
            }
        }
        for (a, b) in y.iter().zip(&direct) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn clip_rejects_short_sources() {
        assert!(clip_source(&[0.0; 10], 11, &mut rng()).is_err());
        let src: Vec<f64> = (0..100).map(|v| v as f64).collect();
        let c = clip_source(&src, 40, &mut rng()).unwrap();
        assert_eq!(c.len(), 40);
        assert_eq!(c[1] - c[0], 1.0);
    }
}
