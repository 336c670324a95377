//! Raster file access by format.

use std::path::Path;

use canopy_core::Raster;

use crate::error::{Error, Result};
use crate::{chmf, geotiff};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RasterFormat {
    Chmf,
    Geotiff,
}

impl RasterFormat {
    /// Guess from the file extension (`.tif`/`.tiff` are GeoTIFF, anything
    /// else CHMF).
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("tif" | "tiff") => RasterFormat::Geotiff,
            _ => RasterFormat::Chmf,
        }
    }
}

pub fn read_raster(path: &Path, format: RasterFormat) -> Result<Raster> {
    if !path.is_file() {
        return Err(Error::Io { path: path.into(), source: std::io::Error::from(std::io::ErrorKind::NotFound) });
    }
    match format {
        RasterFormat::Chmf => chmf::read(path),
        RasterFormat::Geotiff => geotiff::read(path),
    }
}

/// Reads a raster, picking the format from the extension.
pub fn read_any(path: &Path) -> Result<Raster> {
    read_raster(path, RasterFormat::from_path(path))
}

/// Always writes CHMF.
pub fn write_raster(r: &Raster, path: &Path) -> Result<()> {
    chmf::write(r, path)
}
