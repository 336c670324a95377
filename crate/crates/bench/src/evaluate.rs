//! Parallel evaluation over prediction/ground-truth directories.

use std::fmt::Write;
use std::fs;
use std::path::{Path, PathBuf};

use canopy_core::curation::{SampleRecord, Split};
use canopy_core::metrics::{
    build_report, tile_stats, DatasetRanges, EvalConfig, EvalPair, EvalReport, NormalizeScope, TileKey, TileStats,
};
use canopy_core::raster::grid_tiles;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::read_any;
use crate::workers::pool;

#[derive(Debug, Clone)]
pub struct EvalJob {
    pub pred_dir: PathBuf,
    pub gt_dir: PathBuf,
    /// When set, only these sample ids are evaluated, in this order.
    pub ids: Option<Vec<String>>,
    /// Grid-tile each pair; partial edge tiles are kept.
    pub tile_size: Option<u32>,
    pub workers: usize,
    pub config: EvalConfig,
}

fn is_raster(p: &Path) -> bool {
    matches!(p.extension().and_then(|e| e.to_str()), Some("chmf" | "tif" | "tiff"))
}

/// Raster files in `dir`, sorted by file name.
pub fn list_rasters(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(Error::io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_raster(p))
        .collect();
    files.sort();
    Ok(files)
}

fn find_by_id(dir: &Path, id: &str) -> Result<PathBuf> {
    ["chmf", "tif", "tiff"]
        .iter()
        .map(|ext| dir.join(format!("{id}.{ext}")))
        .find(|p| p.is_file())
        .ok_or_else(|| Error::Input(format!("no raster for sample {id} in {}", dir.display())))
}

/// Ids of records usable for evaluation: not excluded, optionally one split.
pub fn manifest_ids(records: &[SampleRecord], split: Option<Split>) -> Vec<String> {
    records.iter().filter(|r| !r.is_excluded() && split.is_none_or(|s| r.split == s)).map(|r| r.id.clone()).collect()
}

/// Matching (ground truth, prediction) files in evaluation order.
pub fn pair_files(job: &EvalJob) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    if !job.gt_dir.is_dir() {
        return Err(Error::Input(format!("ground-truth directory {} does not exist", job.gt_dir.display())));
    }
    if !job.pred_dir.is_dir() {
        return Err(Error::Input(format!("prediction directory {} does not exist", job.pred_dir.display())));
    }
    match &job.ids {
        Some(ids) => ids
            .iter()
            .map(|id| Ok((id.clone(), find_by_id(&job.gt_dir, id)?, find_by_id(&job.pred_dir, id)?)))
            .collect(),
        None => list_rasters(&job.gt_dir)?
            .into_iter()
            .map(|gt| {
                let name = gt.file_name().expect("listed files have names");
                let pred = job.pred_dir.join(name);
                if !pred.is_file() {
                    return Err(Error::Input(format!("missing prediction {}", pred.display())));
                }
                let id = gt.file_stem().expect("listed files have names").to_string_lossy().into_owned();
                Ok((id, gt, pred))
            })
            .collect(),
    }
}

/// Loads every pair (in parallel) and splits it into tiles, in file order.
pub fn load_pairs(job: &EvalJob) -> Result<Vec<(TileKey, EvalPair)>> {
    let files = pair_files(job)?;
    let pool = pool(job.workers)?;
    let loaded: Vec<Result<Vec<(TileKey, EvalPair)>>> = pool.install(|| {
        files
            .par_iter()
            .map(|(id, gt, pred)| {
                let tagged = |e: Error| Error::Record { id: id.clone(), source: Box::new(e) };
                let pair = EvalPair::new(read_any(pred).map_err(tagged)?, read_any(gt).map_err(tagged)?)
                    .map_err(|e| tagged(e.into()))?;
                tile_pair(id, pair, job.tile_size)
            })
            .collect()
    });
    let mut out = Vec::new();
    for tiles in loaded {
        out.extend(tiles?);
    }
    Ok(out)
}

fn tile_pair(id: &str, pair: EvalPair, tile_size: Option<u32>) -> Result<Vec<(TileKey, EvalPair)>> {
    let Some(size) = tile_size else {
        return Ok(vec![(TileKey::whole(id), pair)]);
    };
    let preds = grid_tiles(pair.prediction(), id, size)?;
    let gts = grid_tiles(pair.ground_truth(), id, size)?;
    preds
        .into_iter()
        .zip(gts)
        .map(|(p, g)| {
            let key = TileKey { id: id.to_string(), row_off: p.row_off, col_off: p.col_off, partial: p.partial };
            Ok((key, EvalPair::new(p.raster, g.raster)?))
        })
        .collect()
}

/// Per-tile metrics on `workers` threads, folded in tile order. The result
/// does not depend on the worker count.
pub fn evaluate_pairs(pairs: &[(TileKey, EvalPair)], cfg: &EvalConfig, workers: usize) -> Result<EvalReport> {
    let mut ranges = DatasetRanges::default();
    if cfg.normalize_scope == NormalizeScope::PerDataset {
        pairs.iter().for_each(|(_, p)| ranges.include(p));
    }
    let stats: Vec<TileStats> =
        pool(workers)?.install(|| pairs.par_iter().map(|(k, p)| tile_stats(k.clone(), p, cfg, &ranges)).collect());
    Ok(build_report(&stats, cfg)?)
}

pub fn evaluate(job: &EvalJob) -> Result<EvalReport> {
    let pairs = load_pairs(job)?;
    evaluate_pairs(&pairs, &job.config, job.workers)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.4}"))
}

/// Plain-text summary in the benchmark table's column order.
pub fn summary_text(report: &EvalReport) -> String {
    let a = &report.aggregate;
    let c = &report.config;
    let mut s = String::new();
    let _ = writeln!(s, "{:<8} {:<8} {:<8}", "MAE↓", "IoU↑", "PC↑");
    let _ = writeln!(s, "{:<8} {:<8} {:<8}", format!("{:.4}", a.mae), format!("{:.4}", a.iou), opt(a.pearson));
    let _ = writeln!(
        s,
        "aggregation={:?} tiles={} empty_tiles={} valid_px={} tree_gt={} tree_pred={} pc_undefined={} empty_union={}",
        a.aggregation,
        a.n_tiles,
        a.n_tiles_without_valid,
        a.n_valid,
        a.n_tree_gt,
        a.n_tree_pred,
        a.n_pearson_undefined,
        a.n_empty_union
    );
    let _ = writeln!(
        s,
        "threshold={} normalize_prediction={} normalize_ground_truth={} scope={:?} pc_region={:?}",
        c.threshold, c.normalize_prediction, c.normalize_ground_truth, c.normalize_scope, c.pc_region
    );
    s
}
