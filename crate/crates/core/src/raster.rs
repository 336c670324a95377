//! Single-band raster grid, geometry comparison and tiling.
//!
//! Invalid pixels are stored as NaN. A file may declare any sentinel in
//! [`Raster::nodata`]; constructors map it (and any non-finite value) to NaN
//! so downstream statistics only ever test `is_valid`.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::rng::SplitMix64;

/// Tolerance for pixel size and origin comparisons, in meters.
pub const GEOMETRY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Units {
    Meters,
    Relative,
    Score,
    Dimensionless,
}

impl Units {
    pub fn tag(self) -> u8 {
        match self {
            Units::Meters => 0,
            Units::Relative => 1,
            Units::Score => 2,
            Units::Dimensionless => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => Units::Meters,
            1 => Units::Relative,
            2 => Units::Score,
            3 => Units::Dimensionless,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RasterError {
    EmptyDimensions { width: u32, height: u32 },
    LengthMismatch { expected: usize, actual: usize },
    InvalidPixelSize(f32),
    InvalidOrigin,
    GeometryMismatch(&'static str),
    TileTooLarge { size: u32, width: u32, height: u32 },
    InvalidTileSize,
    InvalidTileCount,
}

impl fmt::Display for RasterError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RasterError::EmptyDimensions { width, height } => {
                write!(f, "raster dimensions must be positive, got {width}x{height}")
            }
            RasterError::LengthMismatch { expected, actual } => {
                write!(f, "expected {expected} values, got {actual}")
            }
            RasterError::InvalidPixelSize(p) => write!(f, "pixel size must be positive and finite, got {p}"),
            RasterError::InvalidOrigin => f.write_str("origin must be finite"),
            RasterError::GeometryMismatch(what) => write!(f, "geometry mismatch: {what} differ"),
            RasterError::TileTooLarge { size, width, height } => {
                write!(f, "tile size {size} exceeds raster {width}x{height}")
            }
            RasterError::InvalidTileSize => f.write_str("tile size must be at least 1"),
            RasterError::InvalidTileCount => f.write_str("tile count must be at least 1"),
        }
    }
}

impl core::error::Error for RasterError {}

/// Grid shape plus georeferencing. Row 0 is the northmost row; `origin` is
/// the map coordinate of the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub width: u32,
    pub height: u32,
    pub pixel_size: f32,
    pub origin_x: f64,
    pub origin_y: f64,
}

impl Geometry {
    pub fn new(width: u32, height: u32, pixel_size: f32, origin_x: f64, origin_y: f64) -> Self {
        Self { width, height, pixel_size, origin_x, origin_y }
    }

    /// Unit-spaced grid anchored at the map origin.
    pub fn unit(width: u32, height: u32) -> Self {
        Self::new(width, height, 1.0, 0.0, 0.0)
    }

    pub fn len(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self) -> Result<(), RasterError> {
        if self.width == 0 || self.height == 0 {
            return Err(RasterError::EmptyDimensions { width: self.width, height: self.height });
        }
        if !(self.pixel_size.is_finite() && self.pixel_size > 0.0) {
            return Err(RasterError::InvalidPixelSize(self.pixel_size));
        }
        if !(self.origin_x.is_finite() && self.origin_y.is_finite()) {
            return Err(RasterError::InvalidOrigin);
        }
        Ok(())
    }

    /// Dimensions must match exactly; pixel size and origin within
    /// [`GEOMETRY_TOLERANCE`].
    pub fn ensure_matches(&self, other: &Geometry) -> Result<(), RasterError> {
        if self.width != other.width || self.height != other.height {
            return Err(RasterError::GeometryMismatch("dimensions"));
        }
        if libm::fabs(f64::from(self.pixel_size) - f64::from(other.pixel_size)) > GEOMETRY_TOLERANCE {
            return Err(RasterError::GeometryMismatch("pixel sizes"));
        }
        if libm::fabs(self.origin_x - other.origin_x) > GEOMETRY_TOLERANCE
            || libm::fabs(self.origin_y - other.origin_y) > GEOMETRY_TOLERANCE
        {
            return Err(RasterError::GeometryMismatch("origins"));
        }
        Ok(())
    }

    /// Geometry of the window starting at (`row`, `col`).
    pub fn window(&self, row: u32, col: u32, rows: u32, cols: u32) -> Geometry {
        let px = f64::from(self.pixel_size);
        Geometry {
            width: cols,
            height: rows,
            pixel_size: self.pixel_size,
            origin_x: self.origin_x + f64::from(col) * px,
            origin_y: self.origin_y - f64::from(row) * px,
        }
    }
}

/// Immutable single-band float grid. Equality is bitwise on the sentinel
/// and values, so NaN pixels compare equal to NaN pixels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Raster {
    geometry: Geometry,
    nodata: f32,
    units: Units,
    values: Vec<f32>,
}

impl Raster {
    /// Builds a raster, mapping `nodata` and non-finite values to NaN.
    pub fn new(geometry: Geometry, nodata: f32, units: Units, mut values: Vec<f32>) -> Result<Self, RasterError> {
        geometry.validate()?;
        if values.len() != geometry.len() {
            return Err(RasterError::LengthMismatch { expected: geometry.len(), actual: values.len() });
        }
        for v in values.iter_mut() {
            if !v.is_finite() || *v == nodata {
                *v = f32::NAN;
            }
        }
        Ok(Self { geometry, nodata, units, values })
    }

    /// Raster with a NaN sentinel on a unit grid; handy for tests and tools.
    pub fn from_values(width: u32, height: u32, units: Units, values: Vec<f32>) -> Result<Self, RasterError> {
        Self::new(Geometry::unit(width, height), f32::NAN, units, values)
    }

    pub fn filled(geometry: Geometry, units: Units, value: f32) -> Result<Self, RasterError> {
        let len = geometry.len();
        Self::new(geometry, f32::NAN, units, alloc::vec![value; len])
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn width(&self) -> u32 {
        self.geometry.width
    }

    pub fn height(&self) -> u32 {
        self.geometry.height
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Declared sentinel; in memory invalid pixels are always NaN.
    pub fn nodata(&self) -> f32 {
        self.nodata
    }

    pub fn units(&self) -> Units {
        self.units
    }

    /// Row-major values, NaN where invalid.
    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    #[inline]
    pub fn is_valid(&self, index: usize) -> bool {
        !self.values[index].is_nan()
    }

    pub fn get(&self, row: u32, col: u32) -> Option<f32> {
        if row >= self.geometry.height || col >= self.geometry.width {
            return None;
        }
        let v = self.values[row as usize * self.geometry.width as usize + col as usize];
        (!v.is_nan()).then_some(v)
    }

    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|v| !v.is_nan()).count()
    }

    pub fn valid_values(&self) -> impl Iterator<Item = f32> + '_ {
        self.values.iter().copied().filter(|v| !v.is_nan())
    }

    /// Same geometry and sentinel, new values and units.
    pub fn with_values(&self, units: Units, values: Vec<f32>) -> Result<Raster, RasterError> {
        Raster::new(self.geometry, self.nodata, units, values)
    }

    /// Applies `f` to valid pixels; invalid pixels stay invalid.
    pub fn map_valid(&self, units: Units, mut f: impl FnMut(f32) -> f32) -> Raster {
        let values = self.values.iter().map(|&v| if v.is_nan() { v } else { f(v) }).collect();
        Raster::new(self.geometry, self.nodata, units, values).expect("geometry already validated")
    }

    pub fn with_nodata(mut self, nodata: f32) -> Raster {
        for v in self.values.iter_mut() {
            if *v == nodata {
                *v = f32::NAN;
            }
        }
        self.nodata = nodata;
        self
    }

    /// Copies the window at (`row`, `col`) of size `rows` x `cols`.
    pub fn crop(&self, row: u32, col: u32, rows: u32, cols: u32) -> Result<Raster, RasterError> {
        if rows == 0 || cols == 0 || row + rows > self.height() || col + cols > self.width() {
            return Err(RasterError::TileTooLarge { size: rows.max(cols), width: self.width(), height: self.height() });
        }
        let w = self.width() as usize;
        let mut values = Vec::with_capacity(rows as usize * cols as usize);
        for r in row as usize..(row + rows) as usize {
            values.extend_from_slice(&self.values[r * w + col as usize..r * w + (col + cols) as usize]);
        }
        Ok(Raster {
            geometry: self.geometry.window(row, col, rows, cols),
            nodata: self.nodata,
            units: self.units,
            values,
        })
    }
}

impl PartialEq for Raster {
    fn eq(&self, other: &Self) -> bool {
        self.geometry == other.geometry
            && self.units == other.units
            && self.nodata.to_bits() == other.nodata.to_bits()
            && self.values.len() == other.values.len()
            && self.values.iter().zip(&other.values).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// A window of a parent raster. Grid tiles at the right or bottom edge may
/// be smaller than the nominal size; those carry `partial = true`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub parent_id: String,
    pub row_off: u32,
    pub col_off: u32,
    pub size: u32,
    pub partial: bool,
    pub raster: Raster,
}

/// Seeded crop offsets `(row_off, col_off)`, drawn row first then column
/// from one [`SplitMix64`] stream with exact-uniform bounded draws.
pub fn random_tile_offsets(
    width: u32,
    height: u32,
    size: u32,
    count: usize,
    seed: u64,
) -> Result<Vec<(u32, u32)>, RasterError> {
    if size == 0 {
        return Err(RasterError::InvalidTileSize);
    }
    if size > width.min(height) {
        return Err(RasterError::TileTooLarge { size, width, height });
    }
    if count == 0 {
        return Err(RasterError::InvalidTileCount);
    }
    let mut rng = SplitMix64::new(seed);
    let rows = u64::from(height - size + 1);
    let cols = u64::from(width - size + 1);
    Ok((0..count)
        .map(|_| {
            let r = rng.below(rows) as u32;
            let c = rng.below(cols) as u32;
            (r, c)
        })
        .collect())
}

/// `count` random square crops of side `size`.
pub fn random_tiles(
    raster: &Raster,
    parent_id: &str,
    size: u32,
    count: usize,
    seed: u64,
) -> Result<Vec<Tile>, RasterError> {
    random_tile_offsets(raster.width(), raster.height(), size, count, seed)?
        .into_iter()
        .map(|(row_off, col_off)| {
            Ok(Tile {
                parent_id: parent_id.into(),
                row_off,
                col_off,
                size,
                partial: false,
                raster: raster.crop(row_off, col_off, size, size)?,
            })
        })
        .collect()
}

/// Non-overlapping row-major tiling covering every pixel exactly once.
pub fn grid_tiles(raster: &Raster, parent_id: &str, size: u32) -> Result<Vec<Tile>, RasterError> {
    if size == 0 {
        return Err(RasterError::InvalidTileSize);
    }
    let (w, h) = (raster.width(), raster.height());
    let mut tiles = Vec::with_capacity((h.div_ceil(size) * w.div_ceil(size)) as usize);
    for row_off in (0..h).step_by(size as usize) {
        for col_off in (0..w).step_by(size as usize) {
            let rows = size.min(h - row_off);
            let cols = size.min(w - col_off);
            tiles.push(Tile {
                parent_id: parent_id.into(),
                row_off,
                col_off,
                size,
                partial: rows < size || cols < size,
                raster: raster.crop(row_off, col_off, rows, cols)?,
            });
        }
    }
    Ok(tiles)
}
