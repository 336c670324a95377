//! Seeded synthetic scenes: terrain, tree crowns and pseudo-predictions.
//!
//! Terrain is value noise with fixed octave constants ([`TERRAIN_OCTAVES`],
//! [`TERRAIN_BASE_CELL`], lacunarity 2, persistence 0.5) over SplitMix64
//! lattice hashes. Terrain and canopy heights are snapped to a 1/256 m grid
//! so that `dtm + canopy` and `dsm - dtm` are exact in f32 for elevations
//! within [`MAX_ABS_ELEVATION`].

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::raster::{Geometry, Raster, Units};
use crate::rng::{mix64, SplitMix64};

pub const TERRAIN_OCTAVES: u32 = 4;
/// Lattice spacing of the coarsest octave, pixels.
pub const TERRAIN_BASE_CELL: f64 = 64.0;
pub const TERRAIN_PERSISTENCE: f64 = 0.5;
/// Heights are multiples of this, meters.
pub const HEIGHT_QUANTUM: f64 = 1.0 / 256.0;
/// Largest |elevation| for which grid heights are exact in f32.
pub const MAX_ABS_ELEVATION: f64 = 32_000.0;
pub const MAX_CROWN_HEIGHT: f64 = 120.0;

const LATTICE_X: u64 = 0x9E37_79B9_7F4A_7C15;
const LATTICE_Y: u64 = 0xC2B2_AE3D_27D4_EB4F;
const NOISE_STREAM: u64 = 0x6E6F_6973_655F_7331;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrownShape {
    /// `h * (1 - (d/r)^2)`
    Paraboloid,
    /// `h * (1 - d/r)`
    Cone,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crown {
    /// `(x, y)` = (column, row) in pixels.
    pub center: (f64, f64),
    pub radius: f64,
    pub height: f64,
    pub shape: CrownShape,
}

impl Crown {
    /// Profile height at distance `d` from the center; zero outside the disc.
    pub fn profile(&self, d: f64) -> f64 {
        if d >= self.radius {
            return 0.0;
        }
        let t = d / self.radius;
        match self.shape {
            CrownShape::Paraboloid => self.height * (1.0 - t * t),
            CrownShape::Cone => self.height * (1.0 - t),
        }
    }

    fn distance(&self, row: u32, col: u32) -> f64 {
        let dx = f64::from(col) - self.center.0;
        let dy = f64::from(row) - self.center.1;
        libm::sqrt(dx * dx + dy * dy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerrainSpec {
    pub base_elevation: f64,
    pub relief_amplitude: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub size: u32,
    pub pixel_size: f32,
    pub terrain: TerrainSpec,
    pub crowns: Vec<Crown>,
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SceneError {
    CrownOutOfBounds { index: usize },
    InvalidCrown { index: usize, reason: &'static str },
    InvalidSpec(&'static str),
}

impl fmt::Display for SceneError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SceneError::CrownOutOfBounds { index } => write!(f, "crown {index} is centered outside the scene"),
            SceneError::InvalidCrown { index, reason } => write!(f, "crown {index}: {reason}"),
            SceneError::InvalidSpec(reason) => write!(f, "invalid scene: {reason}"),
        }
    }
}

impl core::error::Error for SceneError {}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.size == 0 {
            return Err(SceneError::InvalidSpec("size must be positive"));
        }
        if !(self.pixel_size.is_finite() && self.pixel_size > 0.0) {
            return Err(SceneError::InvalidSpec("pixel size must be positive"));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(SceneError::InvalidSpec("noise sigma must be non-negative"));
        }
        let t = &self.terrain;
        if !(t.base_elevation.is_finite() && t.relief_amplitude.is_finite() && t.relief_amplitude >= 0.0) {
            return Err(SceneError::InvalidSpec("terrain parameters must be finite, relief non-negative"));
        }
        if libm::fabs(t.base_elevation) + t.relief_amplitude + MAX_CROWN_HEIGHT > MAX_ABS_ELEVATION {
            return Err(SceneError::InvalidSpec("elevations exceed the exactly representable range"));
        }
        let extent = f64::from(self.size);
        for (index, c) in self.crowns.iter().enumerate() {
            if !(c.radius >= 1.0) {
                return Err(SceneError::InvalidCrown { index, reason: "radius must be at least 1 pixel" });
            }
            if !(c.height > 0.0 && c.height <= MAX_CROWN_HEIGHT) {
                return Err(SceneError::InvalidCrown { index, reason: "height must lie in (0, 120] m" });
            }
            let (x, y) = c.center;
            if !(x >= 0.0 && y >= 0.0 && x < extent && y < extent) {
                return Err(SceneError::CrownOutOfBounds { index });
            }
        }
        Ok(())
    }

    fn geometry(&self) -> Geometry {
        Geometry::new(self.size, self.size, self.pixel_size, 0.0, f64::from(self.size) * f64::from(self.pixel_size))
    }
}

fn quantize_nearest(v: f64) -> f64 {
    libm::round(v / HEIGHT_QUANTUM) * HEIGHT_QUANTUM
}

/// Positive heights round up so a crown's support survives quantization.
fn quantize_canopy(v: f64) -> f64 {
    if v <= 0.0 {
        0.0
    } else {
        libm::ceil(v / HEIGHT_QUANTUM) * HEIGHT_QUANTUM
    }
}

fn lattice(seed: u64, octave: u32, ix: i64, iy: i64) -> f64 {
    let h = mix64(
        seed ^ mix64((ix as u64).wrapping_mul(LATTICE_X) ^ (iy as u64).wrapping_mul(LATTICE_Y) ^ u64::from(octave)),
    );
    (h >> 11) as f64 * (2.0 / (1u64 << 53) as f64) - 1.0
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Fractal value noise in [-1, 1] at pixel coordinates (`x`, `y`).
pub fn terrain_noise(seed: u64, x: f64, y: f64) -> f64 {
    let (mut total, mut norm, mut amp, mut cell) = (0.0, 0.0, 1.0, TERRAIN_BASE_CELL);
    for octave in 0..TERRAIN_OCTAVES {
        let (fx, fy) = (x / cell, y / cell);
        let (x0, y0) = (libm::floor(fx), libm::floor(fy));
        let (tx, ty) = (smoothstep(fx - x0), smoothstep(fy - y0));
        let (ix, iy) = (x0 as i64, y0 as i64);
        let top = lattice(seed, octave, ix, iy) * (1.0 - tx) + lattice(seed, octave, ix + 1, iy) * tx;
        let bottom = lattice(seed, octave, ix, iy + 1) * (1.0 - tx) + lattice(seed, octave, ix + 1, iy + 1) * tx;
        total += amp * (top * (1.0 - ty) + bottom * ty);
        norm += amp;
        amp *= TERRAIN_PERSISTENCE;
        cell /= 2.0;
    }
    total / norm
}

/// Noise-free canopy height at each pixel (max over overlapping crowns).
pub fn canopy_heights(spec: &SceneSpec) -> Vec<f64> {
    let n = spec.size as usize;
    let mut canopy = vec![0.0f64; n * n];
    for crown in &spec.crowns {
        let r = crown.radius;
        let row_lo = libm::floor(crown.center.1 - r).max(0.0) as u32;
        let row_hi = (libm::ceil(crown.center.1 + r) as u32).min(spec.size - 1);
        let col_lo = libm::floor(crown.center.0 - r).max(0.0) as u32;
        let col_hi = (libm::ceil(crown.center.0 + r) as u32).min(spec.size - 1);
        for row in row_lo..=row_hi {
            for col in col_lo..=col_hi {
                let h = quantize_canopy(crown.profile(crown.distance(row, col)));
                let cell = &mut canopy[row as usize * n + col as usize];
                *cell = cell.max(h);
            }
        }
    }
    canopy
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub dsm: Raster,
    pub dtm: Raster,
    pub chm_true: Raster,
}

/// Builds the DSM/DTM/CHM triplet. Identical specs give bitwise identical
/// rasters; noise is added to the DSM on canopy pixels only.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene, SceneError> {
    spec.validate()?;
    let n = spec.size as usize;
    let t = &spec.terrain;
    let dtm: Vec<f64> = (0..n * n)
        .map(|i| {
            let (row, col) = ((i / n) as f64, (i % n) as f64);
            quantize_nearest(t.base_elevation + t.relief_amplitude * terrain_noise(t.seed, col, row))
        })
        .collect();
    let canopy = canopy_heights(spec);
    let mut noise = SplitMix64::new(mix64(t.seed ^ NOISE_STREAM));
    let dsm: Vec<f32> = dtm
        .iter()
        .zip(&canopy)
        .map(|(&ground, &c)| {
            let mut surface = (ground + c) as f32;
            if c > 0.0 && spec.noise_sigma > 0.0 {
                surface = (f64::from(surface) + spec.noise_sigma * noise.next_gaussian()) as f32;
            }
            surface
        })
        .collect();

    let g = spec.geometry();
    let build = |values: Vec<f32>| Raster::new(g, f32::NAN, Units::Meters, values).expect("valid scene geometry");
    Ok(Scene {
        dsm: build(dsm),
        dtm: build(dtm.iter().map(|&v| v as f32).collect()),
        chm_true: build(canopy.iter().map(|&v| v as f32).collect()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbModel {
    /// Multiply heights by the magnitude.
    Scale,
    /// Box filter with radius `round(magnitude)` over valid neighbours.
    Blur,
    /// Zero every height below the magnitude.
    DropoutSmallTrees,
}

/// Degrades a CHM into a pseudo-prediction. The current models draw no
/// random numbers; `seed` is kept in the signature so stochastic models can
/// be added without changing callers.
pub fn perturb_prediction(chm: &Raster, model: PerturbModel, magnitude: f64, seed: u64) -> Raster {
    let _ = seed;
    let magnitude = magnitude.max(0.0);
    match model {
        PerturbModel::Scale => chm.map_valid(chm.units(), |v| (f64::from(v) * magnitude) as f32),
        PerturbModel::DropoutSmallTrees => {
            chm.map_valid(chm.units(), |v| if f64::from(v) < magnitude { 0.0 } else { v })
        }
        PerturbModel::Blur => box_blur(chm, libm::round(magnitude) as usize),
    }
}

fn box_blur(r: &Raster, radius: usize) -> Raster {
    if radius == 0 {
        return r.clone();
    }
    let (w, h) = (r.width() as usize, r.height() as usize);
    let src = r.values();
    // Summed-area tables of values and valid counts.
    let stride = w + 1;
    let mut sum = vec![0.0f64; (h + 1) * stride];
    let mut cnt = vec![0u32; (h + 1) * stride];
    for y in 0..h {
        for x in 0..w {
            let v = src[y * w + x];
            let (s, c) = if v.is_nan() { (0.0, 0) } else { (f64::from(v), 1) };
            let i = (y + 1) * stride + x + 1;
            sum[i] = s + sum[i - 1] + sum[i - stride] - sum[i - stride - 1];
            cnt[i] = c + cnt[i - 1] + cnt[i - stride] - cnt[i - stride - 1];
        }
    }
    let values = (0..w * h)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            if src[i].is_nan() {
                return f32::NAN;
            }
            let (y0, y1) = (y.saturating_sub(radius), (y + radius + 1).min(h));
            let (x0, x1) = (x.saturating_sub(radius), (x + radius + 1).min(w));
            let s = sum[y1 * stride + x1] - sum[y0 * stride + x1] - sum[y1 * stride + x0] + sum[y0 * stride + x0];
            let c = cnt[y1 * stride + x1] + cnt[y0 * stride + x0] - cnt[y0 * stride + x1] - cnt[y1 * stride + x0];
            (s / f64::from(c)) as f32
        })
        .collect();
    r.with_values(r.units(), values).expect("same geometry")
}

/// Seeds of the `desk-v1` fixture corpus.
pub const DESK_V1_SEEDS: core::ops::RangeInclusive<u64> = 1..=12;
pub const DESK_V1_SIZE: u32 = 256;

/// Scene spec of one `desk-v1` fixture: noise-free, 256 x 256 at 1 m, with
/// 25-39 crowns of mixed shape, radius 3-18 px and height 2-40 m.
pub fn desk_v1_spec(seed: u64) -> SceneSpec {
    let mut rng = SplitMix64::new(mix64(seed));
    let count = 25 + rng.below(15) as usize;
    let extent = f64::from(DESK_V1_SIZE);
    let crowns = (0..count)
        .map(|_| Crown {
            center: (libm::floor(rng.next_f64() * extent), libm::floor(rng.next_f64() * extent)),
            radius: 3.0 + rng.below(16) as f64,
            height: 2.0 + rng.below(153) as f64 * 0.25,
            shape: if rng.below(2) == 0 { CrownShape::Paraboloid } else { CrownShape::Cone },
        })
        .collect();
    SceneSpec {
        size: DESK_V1_SIZE,
        pixel_size: 1.0,
        terrain: TerrainSpec { base_elevation: 150.0 + 25.0 * seed as f64, relief_amplitude: 20.0, seed },
        crowns,
        noise_sigma: 0.0,
    }
}

pub fn desk_v1_specs() -> Vec<(u64, SceneSpec)> {
    DESK_V1_SEEDS.map(|s| (s, desk_v1_spec(s))).collect()
}
