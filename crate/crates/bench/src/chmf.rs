//! CHMF v1, the portable single-band raster format.
//!
//! Little-endian layout, 41-byte header:
//!
//! | offset | size | field                                         |
//! |--------|------|-----------------------------------------------|
//! | 0      | 5    | magic `CHMF\x01`                              |
//! | 5      | 4    | width, u32                                    |
//! | 9      | 4    | height, u32                                   |
//! | 13     | 1    | units (0 meters, 1 relative, 2 score, 3 dimensionless) |
//! | 14     | 3    | reserved, zero                                |
//! | 17     | 4    | nodata sentinel, f32                          |
//! | 21     | 4    | pixel size, f32                               |
//! | 25     | 8    | origin x, f64                                 |
//! | 33     | 8    | origin y, f64                                 |
//!
//! followed by `width * height` f32 values, row-major, row 0 northmost.
//! Invalid pixels are written as the sentinel.

use std::fs;
use std::path::Path;

use canopy_core::raster::{Geometry, Raster, Units};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"CHMF\x01";
pub const HEADER_LEN: usize = 41;

pub fn encode(r: &Raster) -> Vec<u8> {
    let g = r.geometry();
    let mut out = Vec::with_capacity(HEADER_LEN + r.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&g.width.to_le_bytes());
    out.extend_from_slice(&g.height.to_le_bytes());
    out.push(r.units().tag());
    out.extend_from_slice(&[0; 3]);
    out.extend_from_slice(&r.nodata().to_le_bytes());
    out.extend_from_slice(&g.pixel_size.to_le_bytes());
    out.extend_from_slice(&g.origin_x.to_le_bytes());
    out.extend_from_slice(&g.origin_y.to_le_bytes());
    let sentinel = r.nodata();
    for &v in r.values() {
        let v = if v.is_nan() { sentinel } else { v };
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn field<const N: usize>(bytes: &[u8], at: usize) -> [u8; N] {
    bytes[at..at + N].try_into().expect("header length checked")
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Raster> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::corrupt(path, format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..5] != MAGIC {
        return Err(Error::corrupt(path, "bad magic"));
    }
    let width = u32::from_le_bytes(field(bytes, 5));
    let height = u32::from_le_bytes(field(bytes, 9));
    let units =
        Units::from_tag(bytes[13]).ok_or_else(|| Error::corrupt(path, format!("unknown units tag {}", bytes[13])))?;
    if bytes[14..17] != [0; 3] {
        return Err(Error::corrupt(path, "reserved bytes are not zero"));
    }
    let nodata = f32::from_le_bytes(field(bytes, 17));
    let pixel_size = f32::from_le_bytes(field(bytes, 21));
    let origin_x = f64::from_le_bytes(field(bytes, 25));
    let origin_y = f64::from_le_bytes(field(bytes, 33));

    let expected = (width as u64 * height as u64).checked_mul(4).map(|n| n + HEADER_LEN as u64);
    if expected != Some(bytes.len() as u64) {
        return Err(Error::corrupt(
            path,
            format!("payload is {} bytes, expected {width}x{height}x4", bytes.len() - HEADER_LEN),
        ));
    }
    let values = bytes[HEADER_LEN..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Raster::new(Geometry::new(width, height, pixel_size, origin_x, origin_y), nodata, units, values)
        .map_err(|e| Error::corrupt(path, e.to_string()))
}

pub fn read(path: &Path) -> Result<Raster> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    decode(&bytes, path)
}

/// Writes `r`, creating missing parent directories.
pub fn write(r: &Raster, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(Error::io(parent))?;
    }
    fs::write(path, encode(r)).map_err(Error::io(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("mem.chmf")
    }

    #[test]
    fn decodes_hand_built_file() {
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&[0, 0, 0, 0]);
        bytes.extend_from_slice(&(-9999.0f32).to_le_bytes());
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        bytes.extend_from_slice(&500_000.0f64.to_le_bytes());
        bytes.extend_from_slice(&4_000_000.0f64.to_le_bytes());
        for v in [0.0f32, 1.0, 2.0, 3.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let r = decode(&bytes, p()).unwrap();
        assert_eq!((r.width(), r.height()), (2, 2));
        assert_eq!(r.values(), &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(r.nodata(), -9999.0);
        assert_eq!(r.geometry().origin_y, 4_000_000.0);
        assert_eq!(encode(&r), bytes);
    }

    #[test]
    fn single_pixel_file_size() {
        let r = Raster::from_values(1, 1, Units::Meters, vec![5.0]).unwrap();
        let bytes = encode(&r);
        assert_eq!(bytes.len(), HEADER_LEN + 4);
        assert_eq!(&bytes[HEADER_LEN..], &5.0f32.to_le_bytes());
    }

    #[test]
    fn nodata_pixels_are_written_as_sentinel() {
        let r = Raster::from_values(2, 1, Units::Meters, vec![f32::NAN, 1.0]).unwrap().with_nodata(-1.0);
        let bytes = encode(&r);
        assert_eq!(&bytes[HEADER_LEN..HEADER_LEN + 4], &(-1.0f32).to_le_bytes());
        assert_eq!(decode(&bytes, p()).unwrap(), r);
    }

    #[test]
    fn corrupt_inputs() {
        let r = Raster::from_values(2, 2, Units::Meters, vec![0.0; 4]).unwrap();
        let good = encode(&r);
        let truncated = &good[..good.len() - 1];
        assert!(matches!(decode(truncated, p()), Err(Error::CorruptFile { .. })));
        let mut long = good.clone();
        long.push(0);
        assert!(matches!(decode(&long, p()), Err(Error::CorruptFile { .. })));
        let mut magic = good.clone();
        magic[0] = b'X';
        assert!(matches!(decode(&magic, p()), Err(Error::CorruptFile { .. })));
        let mut units = good.clone();
        units[13] = 9;
        assert!(matches!(decode(&units, p()), Err(Error::CorruptFile { .. })));
        let mut reserved = good;
        reserved[15] = 1;
        assert!(matches!(decode(&reserved, p()), Err(Error::CorruptFile { .. })));
        assert!(matches!(decode(b"CHMF", p()), Err(Error::CorruptFile { .. })));
    }
}
