//! Canopy height models from surface and terrain elevation rasters.

use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::raster::{Raster, RasterError, Units};

/// Default upper plausibility bound for canopy height, meters.
pub const DEFAULT_MAX_HEIGHT: f32 = 120.0;

#[derive(Debug, Clone, PartialEq)]
pub enum ChmError {
    Geometry(RasterError),
    NotMeters { which: &'static str, units: Units },
}

impl fmt::Display for ChmError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChmError::Geometry(e) => write!(f, "DSM/DTM {e}"),
            ChmError::NotMeters { which, units } => write!(f, "{which} must be in meters, found {units:?}"),
        }
    }
}

impl core::error::Error for ChmError {}

/// A co-registered surface (DSM) and terrain (DTM) model, both in meters.
#[derive(Debug, Clone)]
pub struct ElevationPair {
    dsm: Raster,
    dtm: Raster,
}

impl ElevationPair {
    pub fn new(dsm: Raster, dtm: Raster) -> Result<Self, ChmError> {
        if dsm.units() != Units::Meters {
            return Err(ChmError::NotMeters { which: "DSM", units: dsm.units() });
        }
        if dtm.units() != Units::Meters {
            return Err(ChmError::NotMeters { which: "DTM", units: dtm.units() });
        }
        dsm.geometry().ensure_matches(dtm.geometry()).map_err(ChmError::Geometry)?;
        Ok(Self { dsm, dtm })
    }

    pub fn dsm(&self) -> &Raster {
        &self.dsm
    }

    pub fn dtm(&self) -> &Raster {
        &self.dtm
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChmDerivation {
    pub chm: Raster,
    /// Pixels where DSM < DTM that were clamped to zero.
    pub clamped: usize,
}

/// `DSM - DTM` per pixel. Invalid in either input means invalid out; with
/// `clamp_negative` negative heights become 0 and are counted.
pub fn derive_chm(pair: &ElevationPair, clamp_negative: bool) -> ChmDerivation {
    let mut clamped = 0;
    let values: Vec<f32> = pair
        .dsm
        .values()
        .iter()
        .zip(pair.dtm.values())
        .map(|(&surface, &terrain)| {
            let h = surface - terrain;
            if clamp_negative && h < 0.0 {
                clamped += 1;
                0.0
            } else {
                h
            }
        })
        .collect();
    let chm = pair.dsm.with_values(Units::Meters, values).expect("geometry checked on construction");
    ChmDerivation { chm, clamped }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    Negative,
    TooTall,
    Clamped,
}

impl AnomalyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AnomalyKind::Negative => "negative",
            AnomalyKind::TooTall => "too_tall",
            AnomalyKind::Clamped => "clamped",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anomaly {
    pub kind: AnomalyKind,
    pub count: usize,
}

impl fmt::Display for Anomaly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "anomaly={} count={}", self.kind.as_str(), self.count)
    }
}

/// Scans valid pixels for negative heights and heights above `max_height`.
/// Kinds with zero hits are omitted, so an empty list means clean.
pub fn validate_chm(chm: &Raster, max_height: f32) -> Vec<Anomaly> {
    let (mut negative, mut too_tall) = (0, 0);
    for v in chm.valid_values() {
        if v < 0.0 {
            negative += 1;
        } else if v > max_height {
            too_tall += 1;
        }
    }
    [(AnomalyKind::Negative, negative), (AnomalyKind::TooTall, too_tall)]
        .into_iter()
        .filter(|&(_, count)| count > 0)
        .map(|(kind, count)| Anomaly { kind, count })
        .collect()
}

/// [`validate_chm`] plus a `clamped` entry when the derivation clamped pixels.
pub fn derivation_anomalies(derivation: &ChmDerivation, max_height: f32) -> Vec<Anomaly> {
    let mut out = validate_chm(&derivation.chm, max_height);
    if derivation.clamped > 0 {
        out.push(Anomaly { kind: AnomalyKind::Clamped, count: derivation.clamped });
    }
    out
}
