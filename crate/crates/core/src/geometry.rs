//! Microphone array geometry, far-field steering delays and angle encodings.
//!
//! Coordinates are meters in a right-handed frame. Azimuth is measured in the
//! x-y plane from +x toward +y, elevation is positive toward +z (up).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPEED_OF_SOUND: f64 = 343.0;
pub const SAMPLE_RATE: u32 = 16_000;

pub type Vec3 = [f64; 3];

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn distance(a: Vec3, b: Vec3) -> f64 {
    norm(sub(a, b))
}

/// Microphone positions plus the acoustic constants needed to turn
/// distances into sample delays.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    mic_positions: Vec<Vec3>,
    pairs: Vec<(usize, usize)>,
    sample_rate: u32,
    speed_of_sound: f64,
}

#[derive(Serialize, Deserialize)]
struct GeometryJson {
    mics: Vec<Vec3>,
    fs: u32,
    c: f64,
}

impl ArrayGeometry {
    pub fn new(mic_positions: Vec<Vec3>, sample_rate: u32, speed_of_sound: f64) -> Result<Self> {
        let m = mic_positions.len();
        if m < 2 {
            return Err(Error::InvalidGeometry(format!("need at least 2 mics, got {m}")));
        }
        if sample_rate == 0 || !(speed_of_sound > 0.0) {
            return Err(Error::InvalidGeometry(
                "sample rate and speed of sound must be positive".into(),
            ));
        }
        if mic_positions.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidGeometry("non-finite coordinate".into()));
        }
        let mut pairs = Vec::with_capacity(m * (m - 1) / 2);
        for i in 0..m {
            for j in i + 1..m {
                if distance(mic_positions[i], mic_positions[j]) <= 0.0 {
                    return Err(Error::InvalidGeometry(format!("mics {i} and {j} coincide")));
                }
                pairs.push((i, j));
            }
        }
        Ok(Self {
            mic_positions,
            pairs,
            sample_rate,
            speed_of_sound,
        })
    }

    /// Three mics on a base circle at azimuths 0°, 120°, 240° (z = 0) and one
    /// apex mic above the circle center. Coordinates are relative to the base
    /// circle center.
    pub fn tetrahedral(base_radius: f64, apex_height: f64, sample_rate: u32, speed_of_sound: f64) -> Result<Self> {
        if !(base_radius > 0.0) || !(apex_height > 0.0) {
            return Err(Error::InvalidGeometry(format!(
                "base radius {base_radius} and apex height {apex_height} must be positive"
            )));
        }
        let mut mics: Vec<Vec3> = (0..3)
            .map(|k| {
                let az = 2.0 * PI * k as f64 / 3.0;
                [base_radius * az.cos(), base_radius * az.sin(), 0.0]
            })
            .collect();
        mics.push([0.0, 0.0, apex_height]);
        Self::new(mics, sample_rate, speed_of_sound)
    }

    /// The 5 cm / 8 cm tetrahedron at 16 kHz.
    pub fn default_tetrahedron() -> Self {
        Self::tetrahedral(0.05, 0.08, SAMPLE_RATE, SPEED_OF_SOUND).expect("default tetrahedron is valid")
    }

    pub fn num_mics(&self) -> usize {
        self.mic_positions.len()
    }

    pub fn mic_positions(&self) -> &[Vec3] {
        &self.mic_positions
    }

    /// Unique pairs `(i, j)` with `i < j`, in lexicographic order.
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn speed_of_sound(&self) -> f64 {
        self.speed_of_sound
    }

    pub fn centroid(&self) -> Vec3 {
        let m = self.num_mics() as f64;
        let s = self.mic_positions.iter().fold([0.0; 3], |acc, &p| add(acc, p));
        scale(s, 1.0 / m)
    }

    pub fn pair_distance(&self, i: usize, j: usize) -> f64 {
        distance(self.mic_positions[i], self.mic_positions[j])
    }

    pub fn max_pair_distance(&self) -> f64 {
        self.pairs
            .iter()
            .map(|&(i, j)| self.pair_distance(i, j))
            .fold(0.0, f64::max)
    }

    pub fn max_delay_samples(&self) -> f64 {
        self.max_pair_distance() / self.speed_of_sound * self.sample_rate as f64
    }

    /// Mic positions in room coordinates when the array centroid sits at
    /// `center`.
    pub fn placed_at(&self, center: Vec3) -> Vec<Vec3> {
        let c = self.centroid();
        self.mic_positions.iter().map(|&p| add(center, sub(p, c))).collect()
    }

    /// Far-field arrival delay of each mic in samples, relative to the array
    /// centroid, for a plane wave coming from `direction`. Mics closer to the
    /// source get negative delays.
    pub fn farfield_delays(&self, direction: Direction) -> Vec<f64> {
        let u = direction.unit_vector();
        let c = self.centroid();
        let k = self.sample_rate as f64 / self.speed_of_sound;
        self.mic_positions.iter().map(|&p| -dot(sub(p, c), u) * k).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&GeometryJson {
            mics: self.mic_positions.clone(),
            fs: self.sample_rate,
            c: self.speed_of_sound,
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let g: GeometryJson = serde_json::from_str(s)?;
        Self::new(g.mics, g.fs, g.c)
    }
}

/// Source direction as seen from the array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    /// Radians in (-π, π].
    pub azimuth: f64,
    /// Radians in [-π/2, π/2], positive up.
    pub elevation: f64,
}

impl Direction {
    /// Wraps azimuth into (-π, π] and clamps elevation to [-π/2, π/2].
    pub fn new(azimuth: f64, elevation: f64) -> Self {
        let mut az = azimuth.rem_euclid(2.0 * PI);
        if az > PI {
            az -= 2.0 * PI;
        }
        Self {
            azimuth: az,
            elevation: elevation.clamp(-PI / 2.0, PI / 2.0),
        }
    }

    pub fn from_degrees(azimuth_deg: f64, elevation_deg: f64) -> Self {
        Self::new(azimuth_deg.to_radians(), elevation_deg.to_radians())
    }

    /// Direction of the point `v` (need not be unit length).
    pub fn from_vector(v: Vec3) -> Option<Self> {
        let n = norm(v);
        if !(n > 0.0) || !n.is_finite() {
            return None;
        }
        let el = (v[2] / n).clamp(-1.0, 1.0).asin();
        Some(Self::new(v[1].atan2(v[0]), el))
    }

    pub fn unit_vector(&self) -> Vec3 {
        let (sa, ca) = self.azimuth.sin_cos();
        let (se, ce) = self.elevation.sin_cos();
        [ce * ca, ce * sa, se]
    }

    /// Great-circle angle to `other` in radians.
    pub fn angle_to(&self, other: &Direction) -> f64 {
        dot(self.unit_vector(), other.unit_vector()).clamp(-1.0, 1.0).acos()
    }

    pub fn to_degrees(&self) -> (f64, f64) {
        (self.azimuth.to_degrees(), self.elevation.to_degrees())
    }
}

/// `[cos az, sin az, cos el, sin el]`, continuous across the azimuth wrap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleEncoding(pub [f64; 4]);

pub fn angle_encode(d: Direction) -> AngleEncoding {
    let (sa, ca) = d.azimuth.sin_cos();
    let (se, ce) = d.elevation.sin_cos();
    AngleEncoding([ca, sa, ce, se])
}

/// Each half is normalized before `atan2`, so unnormalized network-style
/// outputs decode too.
pub fn angle_decode(v: AngleEncoding) -> Result<Direction> {
    let [ca, sa, ce, se] = v.0;
    let na = ca.hypot(sa);
    let ne = ce.hypot(se);
    if !(na > 0.0) {
        return Err(Error::DegenerateEncoding("azimuth half has zero norm"));
    }
    if !(ne > 0.0) {
        return Err(Error::DegenerateEncoding("elevation half has zero norm"));
    }
    let az = (sa / na).atan2(ca / na);
    let el = (se / ne).atan2(ce / ne);
    Ok(Direction::new(az, el))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tetrahedron_constants() {
        let g = ArrayGeometry::tetrahedral(0.05, 0.08, 16000, 343.0).unwrap();
        assert_eq!(g.num_mics(), 4);
        assert_eq!(g.pairs().len(), 6);
        let expected = (0.05f64.powi(2) + 0.08f64.powi(2)).sqrt();
        assert!((g.max_pair_distance() - expected).abs() < 1e-12);
        assert!((g.max_pair_distance() - 0.0943).abs() < 1e-4);
        assert!((g.max_delay_samples() - 4.40).abs() < 0.02);
    }

    #[test]
    fn base_pair_distance_matches_trig() {
        let g = ArrayGeometry::tetrahedral(0.05, 0.05, 16000, 343.0).unwrap();
        let base = 2.0 * 0.05 * (60f64).to_radians().sin();
        assert!((g.pair_distance(0, 1) - base).abs() < 1e-12);
        assert!((base - 0.0866).abs() < 1e-4);
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(matches!(
            ArrayGeometry::tetrahedral(0.0, 0.08, 16000, 343.0),
            Err(Error::InvalidGeometry(_))
        ));
        assert!(ArrayGeometry::tetrahedral(0.05, -1.0, 16000, 343.0).is_err());
        assert!(ArrayGeometry::new(vec![[0.0; 3]], 16000, 343.0).is_err());
        assert!(ArrayGeometry::new(vec![[0.0; 3], [0.0; 3]], 16000, 343.0).is_err());
    }

    #[test]
    fn pairs_are_lexicographic() {
        let g = ArrayGeometry::default_tetrahedron();
        assert_eq!(g.pairs(), &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
    }

    #[test]
    fn broadside_pair_has_equal_delays() {
        let g = ArrayGeometry::default_tetrahedron();
        // mics 1 and 2 sit at ±120°, mirror images across the x axis
        let d = g.farfield_delays(Direction::new(0.0, 0.3));
        assert!((d[1] - d[2]).abs() < 1e-12);
    }

    #[test]
    fn apex_is_first_for_overhead_source() {
        let g = ArrayGeometry::default_tetrahedron();
        let d = g.farfield_delays(Direction::new(0.0, PI / 2.0));
        let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(min, d[3]);
    }

    #[test]
    fn farfield_delays_front_direction() {
        // independent dot products: centroid (0, 0, 0.02), u = +x
        let g = ArrayGeometry::default_tetrahedron();
        let d = g.farfield_delays(Direction::new(0.0, 0.0));
        let k = 16000.0 / 343.0;
        let xs = [0.05, 0.05 * (2.0 * PI / 3.0).cos(), 0.05 * (4.0 * PI / 3.0).cos(), 0.0];
        for (m, x) in xs.iter().enumerate() {
            assert!((d[m] - (-x * k)).abs() < 1e-12, "mic {m}");
        }
        assert!((d[0] - (-2.332361516034985)).abs() < 1e-9);
        assert!((d[1] - 1.1661807580174928).abs() < 1e-9);
    }

    #[test]
    fn delay_spread_bounded_over_fov() {
        let g = ArrayGeometry::default_tetrahedron();
        let max = g.max_delay_samples();
        for az in -45..=45 {
            for el in -20..=20 {
                let d = g.farfield_delays(Direction::from_degrees(az as f64, el as f64));
                let hi = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lo = d.iter().cloned().fold(f64::INFINITY, f64::min);
                assert!(hi - lo <= max + 1e-12);
            }
        }
    }

    #[test]
    fn encode_known_values() {
        let v = angle_encode(Direction::new(0.0, 0.0)).0;
        assert_eq!(v, [1.0, 0.0, 1.0, 0.0]);
        let v = angle_encode(Direction::new(PI, 0.0)).0;
        assert!((v[0] + 1.0).abs() < 1e-15 && v[1].abs() < 1e-15);
        assert_eq!(&v[2..], &[1.0, 0.0]);
    }

    #[test]
    fn encode_decode_round_trip() {
        let d = Direction::new(PI / 4.0, -PI / 9.0);
        let back = angle_decode(angle_encode(d)).unwrap();
        assert!((back.azimuth - d.azimuth).abs() < 1e-12);
        assert!((back.elevation - d.elevation).abs() < 1e-12);
    }

    #[test]
    fn decode_normalizes_and_rejects_zero_halves() {
        let d = angle_decode(AngleEncoding([2.0, 2.0, 0.0, 3.0])).unwrap();
        assert!((d.azimuth - PI / 4.0).abs() < 1e-12);
        assert!((d.elevation - PI / 2.0).abs() < 1e-12);
        assert!(angle_decode(AngleEncoding([0.0, 0.0, 1.0, 0.0])).is_err());
        assert!(angle_decode(AngleEncoding([1.0, 0.0, 0.0, 0.0])).is_err());
    }

    #[test]
    fn json_round_trip() {
        let g = ArrayGeometry::default_tetrahedron();
        let s = g.to_json().unwrap();
        assert!(s.starts_with("{\"mics\":[["));
        let back = ArrayGeometry::from_json(&s).unwrap();
        assert_eq!(back, g);
    }
}
