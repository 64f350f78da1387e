//! Scene layout: access point, RIS and user placements, line-of-sight
//! angle derivation, and a single-bounce multipath synthesizer.
//!
//! Angles follow the array-response convention used throughout the crate:
//! for a direction `k` (unit vector pointing from the array toward the far
//! end of the link), `cos(elevation) = k·a` and
//! `sin(elevation)·cos(azimuth) = k·b`, where `a` and `b` are the array's
//! first and second element axes.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this `sin(elevation)` the azimuth is undefined and pinned to π/2.
pub const AZIMUTH_SINGULARITY: f64 = 1e-9;

/// Range of the random reflection factor applied to scattered paths.
pub const REFLECTION_RANGE: (f64, f64) = (0.1, 0.5);

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Position3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position3D {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, other: Self) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, other: Self) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl Add for Position3D {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Position3D {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Position3D {
    type Output = Self;
    fn mul(self, s: f64) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn unit(self) -> Position3D {
        match self {
            Axis::X => Position3D::new(1.0, 0.0, 0.0),
            Axis::Y => Position3D::new(0.0, 1.0, 0.0),
            Axis::Z => Position3D::new(0.0, 0.0, 1.0),
        }
    }
}

/// Uniform planar array. `count_a` elements along `axis_a` (the elevation
/// axis) and `count_b` along `axis_b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpaConfig {
    pub count_a: usize,
    pub count_b: usize,
    pub spacing: f64,
    pub center: Position3D,
    pub axis_a: Axis,
    pub axis_b: Axis,
}

impl UpaConfig {
    pub fn element_count(&self) -> usize {
        self.count_a * self.count_b
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        if self.count_a == 0 || self.count_b == 0 {
            return Err(Error::Config(format!("{name}: element counts must be >= 1")));
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(Error::Config(format!("{name}: spacing must be > 0")));
        }
        if !self.center.is_finite() {
            return Err(Error::Config(format!("{name}: center must be finite")));
        }
        if self.axis_a == self.axis_b {
            return Err(Error::Config(format!("{name}: axis_a and axis_b must differ")));
        }
        Ok(())
    }
}

/// Elevation/azimuth pair, both in `[0, π]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnglePair {
    pub elevation: f64,
    pub azimuth: f64,
}

impl AnglePair {
    pub fn new(elevation: f64, azimuth: f64) -> Result<Self> {
        let ok = |v: f64| (0.0..=PI).contains(&v);
        if !ok(elevation) || !ok(azimuth) {
            return Err(Error::Config(format!(
                "angles out of [0, pi]: elevation={elevation}, azimuth={azimuth}"
            )));
        }
        Ok(Self { elevation, azimuth })
    }

    pub fn in_range(&self) -> bool {
        (0.0..=PI).contains(&self.elevation) && (0.0..=PI).contains(&self.azimuth)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuRisPath {
    pub gain: Complex64,
    pub arrival_at_ris: AnglePair,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RisApPath {
    pub gain: Complex64,
    pub departure_at_ris: AnglePair,
    pub arrival_at_ap: AnglePair,
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub min: Position3D,
    pub max: Position3D,
}

impl Bounds {
    pub fn is_nonempty(&self) -> bool {
        self.min.is_finite()
            && self.max.is_finite()
            && self.min.x < self.max.x
            && self.min.y < self.max.y
            && self.min.z < self.max.z
    }

    pub fn contains(&self, p: Position3D) -> bool {
        (self.min.x..=self.max.x).contains(&p.x)
            && (self.min.y..=self.max.y).contains(&p.y)
            && (self.min.z..=self.max.z).contains(&p.z)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Position3D {
        Position3D::new(
            rng.random_range(self.min.x..self.max.x),
            rng.random_range(self.min.y..self.max.y),
            rng.random_range(self.min.z..self.max.z),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// Carrier wavelength in meters.
    pub wavelength: f64,
    pub ap: UpaConfig,
    pub ris: UpaConfig,
    pub n_paths_mu_ris: usize,
    pub n_paths_ris_ap: usize,
    pub scatter_bounds: Bounds,
    pub tx_power_dbm: f64,
    pub noise_power_dbm: f64,
    pub pilot_length: usize,
    pub rng_seed: u64,
}

/// 28 GHz carrier.
pub const DEFAULT_WAVELENGTH: f64 = 299_792_458.0 / 28e9;

impl Default for SceneConfig {
    fn default() -> Self {
        let half_wave = DEFAULT_WAVELENGTH / 2.0;
        Self {
            wavelength: DEFAULT_WAVELENGTH,
            ap: UpaConfig {
                count_a: 16,
                count_b: 16,
                spacing: half_wave,
                center: Position3D::new(-10.0, -5.0, 2.5),
                axis_a: Axis::X,
                axis_b: Axis::Z,
            },
            ris: UpaConfig {
                count_a: 16,
                count_b: 16,
                spacing: half_wave,
                center: Position3D::new(-5.10, -1.43, 2.0),
                axis_a: Axis::Y,
                axis_b: Axis::Z,
            },
            n_paths_mu_ris: 1,
            n_paths_ris_ap: 128,
            scatter_bounds: Bounds {
                min: Position3D::new(-16.0, -6.0, 0.0),
                max: Position3D::new(-4.0, 8.0, 3.0),
            },
            tx_power_dbm: 10.0,
            noise_power_dbm: DEFAULT_NOISE_POWER_DBM,
            pilot_length: 8,
            rng_seed: 0,
        }
    }
}

/// Calibrated so the averaged fingerprint at the grid center sees roughly
/// 20 dB SNR in the default scene.
pub const DEFAULT_NOISE_POWER_DBM: f64 = -117.62;

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.wavelength > 0.0 && self.wavelength.is_finite()) {
            return Err(Error::Config("wavelength must be > 0".into()));
        }
        self.ap.validate("ap")?;
        self.ris.validate("ris")?;
        if self.n_paths_mu_ris < 1 {
            return Err(Error::Config("n_paths_mu_ris must be >= 1".into()));
        }
        if self.n_paths_ris_ap < 1 {
            return Err(Error::Config("n_paths_ris_ap must be >= 1".into()));
        }
        if self.pilot_length < 1 {
            return Err(Error::Config("pilot_length must be >= 1".into()));
        }
        if !self.scatter_bounds.is_nonempty() {
            return Err(Error::Config("scatter_bounds must be a nonempty box".into()));
        }
        if !self.tx_power_dbm.is_finite() || !self.noise_power_dbm.is_finite() {
            return Err(Error::Config("powers must be finite".into()));
        }
        Ok(())
    }
}

/// Angles of the direction `from → to` expressed in `array`'s frame.
pub fn direction_angles(from: Position3D, to: Position3D, array: &UpaConfig) -> Result<AnglePair> {
    let delta = to - from;
    let dist = delta.norm();
    if dist == 0.0 || !dist.is_finite() {
        return Err(Error::DegenerateDirection);
    }
    let k = delta * (1.0 / dist);
    let cos_el = k.dot(array.axis_a.unit()).clamp(-1.0, 1.0);
    let elevation = cos_el.acos();
    let sin_el = elevation.sin();
    let azimuth = if sin_el < AZIMUTH_SINGULARITY {
        PI / 2.0
    } else {
        (k.dot(array.axis_b.unit()) / sin_el).clamp(-1.0, 1.0).acos()
    };
    Ok(AnglePair { elevation, azimuth })
}

/// Free-space gain over `distance`, including the propagation phase.
pub fn free_space_gain(distance: f64, wavelength: f64) -> Complex64 {
    let amplitude = wavelength / (4.0 * PI * distance);
    Complex64::from_polar(amplitude, -2.0 * PI * distance / wavelength)
}

fn reflection<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let factor = rng.random_range(REFLECTION_RANGE.0..=REFLECTION_RANGE.1);
    let phase = rng.random_range(0.0..2.0 * PI);
    Complex64::from_polar(factor, phase)
}

/// MU → RIS paths: the direct path first, then `n_paths_mu_ris − 1`
/// single-bounce paths via scatterers drawn from `rng`.
pub fn synth_mu_ris_paths<R: Rng + ?Sized>(
    scene: &SceneConfig,
    mu: Position3D,
    rng: &mut R,
) -> Result<Vec<MuRisPath>> {
    if scene.n_paths_mu_ris < 1 {
        return Err(Error::Config("n_paths_mu_ris must be >= 1".into()));
    }
    if !mu.is_finite() {
        return Err(Error::Config("user position must be finite".into()));
    }
    let ris = &scene.ris;
    let lambda = scene.wavelength;
    let mut paths = Vec::with_capacity(scene.n_paths_mu_ris);
    paths.push(MuRisPath {
        gain: free_space_gain(mu.distance(ris.center), lambda),
        arrival_at_ris: direction_angles(ris.center, mu, ris)?,
    });
    for _ in 1..scene.n_paths_mu_ris {
        let scatterer = scene.scatter_bounds.sample(rng);
        let bounce = mu.distance(scatterer) + scatterer.distance(ris.center);
        paths.push(MuRisPath {
            gain: reflection(rng) * free_space_gain(bounce, lambda),
            arrival_at_ris: direction_angles(ris.center, scatterer, ris)?,
        });
    }
    Ok(paths)
}

/// RIS → AP paths: the direct RIS-center → AP-center path first, then
/// single-bounce paths via scatterers drawn from `rng`.
pub fn synth_ris_ap_paths<R: Rng + ?Sized>(scene: &SceneConfig, rng: &mut R) -> Result<Vec<RisApPath>> {
    if scene.n_paths_ris_ap < 1 {
        return Err(Error::Config("n_paths_ris_ap must be >= 1".into()));
    }
    let (ris, ap) = (&scene.ris, &scene.ap);
    let lambda = scene.wavelength;
    let mut paths = Vec::with_capacity(scene.n_paths_ris_ap);
    paths.push(RisApPath {
        gain: free_space_gain(ris.center.distance(ap.center), lambda),
        departure_at_ris: direction_angles(ris.center, ap.center, ris)?,
        arrival_at_ap: direction_angles(ap.center, ris.center, ap)?,
    });
    for _ in 1..scene.n_paths_ris_ap {
        let scatterer = scene.scatter_bounds.sample(rng);
        let bounce = ris.center.distance(scatterer) + scatterer.distance(ap.center);
        paths.push(RisApPath {
            gain: reflection(rng) * free_space_gain(bounce, lambda),
            departure_at_ris: direction_angles(ris.center, scatterer, ris)?,
            arrival_at_ap: direction_angles(ap.center, scatterer, ap)?,
        });
    }
    Ok(paths)
}

/// Rectangular measurement grid, stacked over several heights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub length_m: f64,
    pub width_m: f64,
    pub spacing_m: f64,
    pub heights_m: Vec<f64>,
    pub origin: Position3D,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            length_m: 9.6,
            width_m: 5.8,
            spacing_m: 0.2,
            heights_m: vec![1.4, 1.5, 1.6],
            origin: Position3D::new(-14.8, 0.0, 0.0),
        }
    }
}

impl GridSpec {
    pub fn positions(&self) -> Result<Vec<Position3D>> {
        grid_positions(self.length_m, self.width_m, self.spacing_m, &self.heights_m, self.origin)
    }
}

/// Number of grid steps along an extent. The small tolerance absorbs
/// decimal representation error (9.6 / 0.2 = 47.99999…).
fn steps(extent: f64, spacing: f64) -> usize {
    ((extent / spacing) + 1e-9).floor() as usize
}

/// Grid points ordered height-outermost, then along length, then width.
pub fn grid_positions(
    length_m: f64,
    width_m: f64,
    spacing_m: f64,
    heights_m: &[f64],
    origin: Position3D,
) -> Result<Vec<Position3D>> {
    if !(spacing_m > 0.0 && spacing_m.is_finite()) {
        return Err(Error::Config("grid spacing must be > 0".into()));
    }
    if !(length_m >= 0.0 && width_m >= 0.0) || !length_m.is_finite() || !width_m.is_finite() {
        return Err(Error::Config("grid length and width must be >= 0".into()));
    }
    let (ni, nj) = (steps(length_m, spacing_m) + 1, steps(width_m, spacing_m) + 1);
    let mut out = Vec::with_capacity(ni * nj * heights_m.len());
    for &h in heights_m {
        for i in 0..ni {
            for j in 0..nj {
                out.push(origin + Position3D::new(i as f64 * spacing_m, j as f64 * spacing_m, h));
            }
        }
    }
    Ok(out)
}
