use std::io;
use std::path::PathBuf;

use canopy_core::chm::ChmError;
use canopy_core::cost::ManifestError;
use canopy_core::curation::CurationError;
use canopy_core::metrics::MetricError;
use canopy_core::raster::RasterError;
use canopy_core::synth::SceneError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{}: unsupported format: {reason}", path.display())]
    UnsupportedFormat { path: PathBuf, reason: String },
    #[error("{}: corrupt file: {reason}", path.display())]
    CorruptFile { path: PathBuf, reason: String },
    #[error("{}: invalid JSON: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("record {id}: {source}")]
    Record {
        id: String,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Chm(#[from] ChmError),
    #[error(transparent)]
    Curation(#[from] CurationError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("score command failed for {image}: {reason}")]
    ScoreCommand { image: String, reason: String },
    #[error("{0}")]
    Input(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    pub fn corrupt(path: impl Into<PathBuf>, reason: impl Into<String>) -> Error {
        Error::CorruptFile { path: path.into(), reason: reason.into() }
    }

    pub fn unsupported(path: impl Into<PathBuf>, reason: impl Into<String>) -> Error {
        Error::UnsupportedFormat { path: path.into(), reason: reason.into() }
    }
}
