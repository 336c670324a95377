//! Minimal single-band GeoTIFF reader.
//!
//! Reads the grid, `ModelPixelScale` + `ModelTiepoint` georeferencing and the
//! GDAL nodata tag. Anything beyond one numeric band is rejected.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use canopy_core::raster::{Geometry, Raster, Units};
use tiff::decoder::{Decoder, DecodingResult};
use tiff::tags::Tag;
use tiff::{ColorType, TiffError};

use crate::error::{Error, Result};

fn tiff_err(path: &Path) -> impl Fn(TiffError) -> Error + '_ {
    move |e| match e {
        TiffError::UnsupportedError(u) => Error::unsupported(path, u.to_string()),
        TiffError::IoError(source) => Error::Io { path: path.into(), source },
        other => Error::corrupt(path, other.to_string()),
    }
}

fn to_f32<T: Copy + Into<f64>>(v: Vec<T>) -> Vec<f32> {
    v.into_iter().map(|x| x.into() as f32).collect()
}

pub fn read(path: &Path) -> Result<Raster> {
    let file = File::open(path).map_err(Error::io(path))?;
    let mut dec = Decoder::new(BufReader::new(file)).map_err(tiff_err(path))?;
    match dec.colortype().map_err(tiff_err(path))? {
        ColorType::Gray(_) => {}
        other => {
            return Err(Error::unsupported(path, format!("only single-band rasters are supported, found {other:?}")))
        }
    }
    let (width, height) = dec.dimensions().map_err(tiff_err(path))?;

    let scale = dec.find_tag(Tag::ModelPixelScaleTag).map_err(tiff_err(path))?;
    let (pixel_size, origin_x, origin_y) = match scale {
        Some(v) => {
            let s = v.into_f64_vec().map_err(tiff_err(path))?;
            if s.len() < 2 {
                return Err(Error::corrupt(path, "ModelPixelScale needs two values"));
            }
            if (s[0] - s[1]).abs() > 1e-9 * s[0].abs().max(1.0) {
                return Err(Error::unsupported(path, "non-square pixels"));
            }
            let tie = dec
                .find_tag(Tag::ModelTiepointTag)
                .map_err(tiff_err(path))?
                .map(|t| t.into_f64_vec())
                .transpose()
                .map_err(tiff_err(path))?
                .unwrap_or_else(|| vec![0.0; 6]);
            if tie.len() < 6 {
                return Err(Error::corrupt(path, "ModelTiepoint needs six values"));
            }
            (s[0] as f32, tie[3] - tie[0] * s[0], tie[4] + tie[1] * s[1])
        }
        None => (1.0, 0.0, 0.0),
    };
    let nodata = match dec.find_tag(Tag::GdalNodata).map_err(tiff_err(path))? {
        Some(v) => {
            let text = v.into_string().map_err(tiff_err(path))?;
            let text = text.trim_matches(|c: char| c == '\0' || c.is_whitespace());
            text.parse::<f64>().map_err(|_| Error::corrupt(path, format!("nodata tag {text:?} is not a number")))?
                as f32
        }
        None => f32::NAN,
    };

    let values = match dec.read_image().map_err(tiff_err(path))? {
        DecodingResult::U8(v) => to_f32(v),
        DecodingResult::U16(v) => to_f32(v),
        DecodingResult::U32(v) => to_f32(v),
        DecodingResult::U64(v) => v.into_iter().map(|x| x as f32).collect(),
        DecodingResult::I8(v) => to_f32(v),
        DecodingResult::I16(v) => to_f32(v),
        DecodingResult::I32(v) => to_f32(v),
        DecodingResult::I64(v) => v.into_iter().map(|x| x as f32).collect(),
        DecodingResult::F32(v) => v,
        DecodingResult::F64(v) => v.into_iter().map(|x| x as f32).collect(),
    };
    let geometry = Geometry::new(width, height, pixel_size, origin_x, origin_y);
    Raster::new(geometry, nodata, Units::Meters, values).map_err(|e| Error::corrupt(path, e.to_string()))
}
