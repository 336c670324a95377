//! Canopy height benchmarking core.
//!
//! Everything in this crate is pure computation over in-memory rasters and
//! builds without `std` (an allocator is required). File formats, the worker
//! pool and the command line live in the `canopy-bench` companion crate.
//!
//! Module map:
//!
//! - [`raster`]: the single-band [`Raster`] grid, geometry checks, tiling.
//! - [`chm`]: canopy height derivation from surface/terrain elevation pairs.
//! - [`curation`]: sample records, quality and empty-canopy filters, the
//!   two-sample Kolmogorov-Smirnov test and split distribution reports.
//! - [`metrics`]: MAE, tree-extent IoU, tree-masked Pearson correlation,
//!   min-max normalization and deterministic tile aggregation.
//! - [`synth`]: seeded synthetic scenes and pseudo-predictions.
//! - [`cost`]: run manifests, cost/carbon estimates and the benchmark table.

#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod chm;
pub mod cost;
pub mod curation;
pub mod metrics;
pub mod raster;
pub mod rng;
pub mod sum;
pub mod synth;

pub use chm::{derive_chm, validate_chm, Anomaly, AnomalyKind, ChmDerivation, ElevationPair};
pub use cost::{estimate_cost, render_benchmark_table, CostRates, CostReport, RunManifest};
pub use curation::{ks_two_sample, KsResult, SampleRecord};
pub use metrics::{evaluate_serial, EvalConfig, EvalPair, MetricReport};
pub use raster::{Raster, RasterError, Tile, Units};
pub use rng::SplitMix64;
pub use synth::{generate_scene, perturb_prediction, SceneSpec};
