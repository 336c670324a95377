//! File formats, parallel drivers, the staged pipeline and the `canopy` CLI
//! built on top of `canopy-core`.

pub mod chmf;
pub mod curate;
pub mod error;
pub mod evaluate;
pub mod geotiff;
pub mod io;
pub mod json;
pub mod pipeline;
pub mod scenes;
pub mod workers;

pub use error::{Error, Result};
