//! Evaluation metrics over prediction/ground-truth raster pairs.
//!
//! Per-tile work ([`tile_stats`]) is pure and order-free; [`aggregate`]
//! folds tiles in the order given using compensated sums, so any parallel
//! map that preserves tile order reproduces the serial report bit for bit.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::raster::{Raster, RasterError, Units};
use crate::sum::NeumaierSum;

/// Height above which a pixel counts as tree canopy.
pub const DEFAULT_TREE_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub enum MetricError {
    Geometry(RasterError),
    NoValidPixels,
    DomainMismatch,
}

impl fmt::Display for MetricError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricError::Geometry(e) => write!(f, "prediction/ground truth {e}"),
            MetricError::NoValidPixels => f.write_str("no pixel is valid in both rasters"),
            MetricError::DomainMismatch => f.write_str("masks are defined over different pixel sets"),
        }
    }
}

impl core::error::Error for MetricError {}

/// Prediction and ground truth over the same grid. A pixel takes part in
/// any statistic only when it is valid in both.
#[derive(Debug, Clone)]
pub struct EvalPair {
    prediction: Raster,
    ground_truth: Raster,
}

impl EvalPair {
    pub fn new(prediction: Raster, ground_truth: Raster) -> Result<Self, MetricError> {
        prediction.geometry().ensure_matches(ground_truth.geometry()).map_err(MetricError::Geometry)?;
        Ok(Self { prediction, ground_truth })
    }

    pub fn prediction(&self) -> &Raster {
        &self.prediction
    }

    pub fn ground_truth(&self) -> &Raster {
        &self.ground_truth
    }

    #[inline]
    pub fn is_valid(&self, i: usize) -> bool {
        self.prediction.is_valid(i) && self.ground_truth.is_valid(i)
    }

    pub fn valid_mask(&self) -> Vec<bool> {
        (0..self.prediction.len()).map(|i| self.is_valid(i)).collect()
    }

    pub fn n_valid(&self) -> usize {
        (0..self.prediction.len()).filter(|&i| self.is_valid(i)).count()
    }

    /// Tree masks of both rasters restricted to the joint valid domain.
    pub fn tree_masks(&self, threshold: f64) -> (BinaryMask, BinaryMask) {
        let domain = self.valid_mask();
        (
            tree_mask(&self.prediction, threshold).restrict(&domain),
            tree_mask(&self.ground_truth, threshold).restrict(&domain),
        )
    }
}

/// Boolean mask over the valid pixels of a raster. Pixels outside `domain`
/// are neither inside nor outside the mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    domain: Vec<bool>,
    set: Vec<bool>,
}

impl BinaryMask {
    pub fn new(domain: Vec<bool>, set: Vec<bool>) -> Self {
        assert_eq!(domain.len(), set.len());
        let set = set.iter().zip(&domain).map(|(&s, &d)| s && d).collect();
        Self { domain, set }
    }

    pub fn domain(&self) -> &[bool] {
        &self.domain
    }

    pub fn set(&self) -> &[bool] {
        &self.set
    }

    pub fn count(&self) -> usize {
        self.set.iter().filter(|&&s| s).count()
    }

    pub fn restrict(&self, domain: &[bool]) -> BinaryMask {
        let domain: Vec<bool> = self.domain.iter().zip(domain).map(|(&a, &b)| a && b).collect();
        BinaryMask::new(domain, self.set.clone())
    }
}

/// `value > threshold` on valid pixels (strict).
pub fn tree_mask(r: &Raster, threshold: f64) -> BinaryMask {
    let domain = (0..r.len()).map(|i| r.is_valid(i)).collect();
    let set = r.values().iter().map(|&v| f64::from(v) > threshold).collect();
    BinaryMask::new(domain, set)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IouValue {
    pub value: f64,
    pub intersection: usize,
    pub union: usize,
    /// Neither mask has a pixel set; `value` is 1 by convention.
    pub empty_union: bool,
}

impl IouValue {
    fn from_counts(intersection: usize, union: usize) -> Self {
        if union == 0 {
            IouValue { value: 1.0, intersection, union, empty_union: true }
        } else {
            IouValue { value: intersection as f64 / union as f64, intersection, union, empty_union: false }
        }
    }
}

pub fn iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<IouValue, MetricError> {
    if pred.domain != gt.domain {
        return Err(MetricError::DomainMismatch);
    }
    let (mut inter, mut union) = (0, 0);
    for (&p, &g) in pred.set.iter().zip(&gt.set) {
        inter += usize::from(p && g);
        union += usize::from(p || g);
    }
    Ok(IouValue::from_counts(inter, union))
}

/// Mean absolute error over the joint valid pixels.
pub fn mae(pair: &EvalPair) -> Result<f64, MetricError> {
    let mut sum = NeumaierSum::new();
    let mut n = 0usize;
    for (i, (&p, &g)) in pair.prediction.values().iter().zip(pair.ground_truth.values()).enumerate() {
        if pair.is_valid(i) {
            sum.add(libm::fabs(f64::from(p) - f64::from(g)));
            n += 1;
        }
    }
    if n == 0 {
        return Err(MetricError::NoValidPixels);
    }
    Ok(sum.value() / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcRegion {
    /// Pixels where the ground truth is tree.
    #[default]
    GtTree,
    /// Pixels where either raster is tree.
    UnionTree,
}

/// Sample Pearson correlation by the two-pass formula. `None` with fewer
/// than two points or when either side has zero variance.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    debug_assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    if n < 2 {
        return None;
    }
    let mx = xs.iter().copied().collect::<NeumaierSum>().value() / n as f64;
    let my = ys.iter().copied().collect::<NeumaierSum>().value() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (NeumaierSum::new(), NeumaierSum::new(), NeumaierSum::new());
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy.add(dx * dy);
        sxx.add(dx * dx);
        syy.add(dy * dy);
    }
    let (sxx, syy) = (sxx.value(), syy.value());
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy.value() / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

fn region_contains(region: PcRegion, pred_tree: bool, gt_tree: bool) -> bool {
    match region {
        PcRegion::GtTree => gt_tree,
        PcRegion::UnionTree => gt_tree || pred_tree,
    }
}

/// Pearson correlation of prediction and ground truth inside the tree region.
pub fn pearson_tree(pair: &EvalPair, region: PcRegion, threshold: f64) -> Option<f64> {
    let (pm, gm) = pair.tree_masks(threshold);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for i in 0..pair.prediction.len() {
        if pm.domain[i] && region_contains(region, pm.set[i], gm.set[i]) {
            xs.push(f64::from(pair.prediction.values()[i]));
            ys.push(f64::from(pair.ground_truth.values()[i]));
        }
    }
    pearson(&xs, &ys)
}

/// Affine map of valid values onto [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    pub fn of(r: &Raster) -> Option<MinMax> {
        r.valid_values().fold(None, |acc, v| {
            let v = f64::from(v);
            Some(match acc {
                None => MinMax { min: v, max: v },
                Some(m) => MinMax { min: m.min.min(v), max: m.max.max(v) },
            })
        })
    }

    pub fn union(self, other: MinMax) -> MinMax {
        MinMax { min: self.min.min(other.min), max: self.max.max(other.max) }
    }

    /// Constant input: everything maps to zero.
    pub fn is_degenerate(&self) -> bool {
        self.max <= self.min
    }

    #[inline]
    pub fn apply(&self, v: f64) -> f64 {
        if self.is_degenerate() {
            0.0
        } else {
            ((v - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Normalized {
    pub raster: Raster,
    /// The input was constant, so the output is all zero.
    pub degenerate: bool,
}

/// Rescales valid values to [0, 1] relative height.
pub fn minmax_normalize(r: &Raster) -> Result<Normalized, MetricError> {
    let range = MinMax::of(r).ok_or(MetricError::NoValidPixels)?;
    Ok(Normalized {
        raster: r.map_valid(Units::Relative, |v| range.apply(f64::from(v)) as f32),
        degenerate: range.is_degenerate(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Pool pixels across tiles.
    #[default]
    Micro,
    /// Unweighted mean of per-tile metrics.
    Macro,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizeScope {
    /// Each tile's rasters use their own min and max.
    #[default]
    PerTile,
    /// One min/max per role across the whole evaluated set.
    PerDataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub threshold: f64,
    pub aggregation: Aggregation,
    pub normalize_prediction: bool,
    pub normalize_ground_truth: bool,
    pub normalize_scope: NormalizeScope,
    pub pc_region: PcRegion,
    /// Threshold rasters in meters before normalization; rasters in other
    /// units are always thresholded after normalization.
    pub mask_on_metric_heights: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_TREE_THRESHOLD,
            aggregation: Aggregation::Micro,
            normalize_prediction: true,
            normalize_ground_truth: true,
            normalize_scope: NormalizeScope::PerTile,
            pc_region: PcRegion::GtTree,
            mask_on_metric_heights: true,
        }
    }
}

impl EvalConfig {
    /// Raw heights, no normalization.
    pub fn raw() -> Self {
        Self { normalize_prediction: false, normalize_ground_truth: false, ..Self::default() }
    }
}

/// Where a tile came from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TileKey {
    pub id: String,
    pub row_off: u32,
    pub col_off: u32,
    pub partial: bool,
}

impl TileKey {
    pub fn whole(id: impl Into<String>) -> Self {
        Self { id: id.into(), ..Self::default() }
    }
}

/// Dataset-wide ranges used with [`NormalizeScope::PerDataset`].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetRanges {
    pub prediction: Option<MinMax>,
    pub ground_truth: Option<MinMax>,
}

impl DatasetRanges {
    pub fn include(&mut self, pair: &EvalPair) {
        let merge = |acc: Option<MinMax>, r: Option<MinMax>| match (acc, r) {
            (Some(a), Some(b)) => Some(a.union(b)),
            (a, b) => a.or(b),
        };
        self.prediction = merge(self.prediction, MinMax::of(&pair.prediction));
        self.ground_truth = merge(self.ground_truth, MinMax::of(&pair.ground_truth));
    }
}

/// Per-tile partial results. Sums stay unrounded so tiles can be pooled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileStats {
    pub key: TileKey,
    pub n_valid: usize,
    pub abs_error: NeumaierSum,
    pub intersection: usize,
    pub union: usize,
    pub n_tree_gt: usize,
    pub n_tree_pred: usize,
    pub pearson: Option<f64>,
    pub degenerate_normalization: bool,
}

impl TileStats {
    pub fn mae(&self) -> Option<f64> {
        (self.n_valid > 0).then(|| self.abs_error.value() / self.n_valid as f64)
    }

    pub fn iou(&self) -> IouValue {
        IouValue::from_counts(self.intersection, self.union)
    }
}

fn value_map(r: &Raster, normalize: bool, scope: NormalizeScope, dataset: Option<MinMax>) -> (Option<MinMax>, bool) {
    if !normalize {
        return (None, false);
    }
    let range = match scope {
        NormalizeScope::PerTile => MinMax::of(r),
        NormalizeScope::PerDataset => dataset.or_else(|| MinMax::of(r)),
    };
    (range, range.is_some_and(|m| m.is_degenerate()))
}

/// Computes every per-tile quantity in one pass over the pixels.
pub fn tile_stats(key: TileKey, pair: &EvalPair, cfg: &EvalConfig, ranges: &DatasetRanges) -> TileStats {
    let (pred_map, pred_degenerate) =
        value_map(&pair.prediction, cfg.normalize_prediction, cfg.normalize_scope, ranges.prediction);
    let (gt_map, gt_degenerate) =
        value_map(&pair.ground_truth, cfg.normalize_ground_truth, cfg.normalize_scope, ranges.ground_truth);
    let mask_raw = |r: &Raster| cfg.mask_on_metric_heights && r.units() == Units::Meters;
    let (pred_mask_raw, gt_mask_raw) = (mask_raw(&pair.prediction), mask_raw(&pair.ground_truth));

    let mut stats = TileStats {
        key,
        n_valid: 0,
        abs_error: NeumaierSum::new(),
        intersection: 0,
        union: 0,
        n_tree_gt: 0,
        n_tree_pred: 0,
        pearson: None,
        degenerate_normalization: pred_degenerate || gt_degenerate,
    };
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (i, (&p, &g)) in pair.prediction.values().iter().zip(pair.ground_truth.values()).enumerate() {
        if !pair.is_valid(i) {
            continue;
        }
        let (p_raw, g_raw) = (f64::from(p), f64::from(g));
        let p_val = pred_map.map_or(p_raw, |m| m.apply(p_raw));
        let g_val = gt_map.map_or(g_raw, |m| m.apply(g_raw));
        let p_tree = if pred_mask_raw { p_raw } else { p_val } > cfg.threshold;
        let g_tree = if gt_mask_raw { g_raw } else { g_val } > cfg.threshold;

        stats.n_valid += 1;
        stats.abs_error.add(libm::fabs(p_val - g_val));
        stats.intersection += usize::from(p_tree && g_tree);
        stats.union += usize::from(p_tree || g_tree);
        stats.n_tree_gt += usize::from(g_tree);
        stats.n_tree_pred += usize::from(p_tree);
        if region_contains(cfg.pc_region, p_tree, g_tree) {
            xs.push(p_val);
            ys.push(g_val);
        }
    }
    stats.pearson = pearson(&xs, &ys);
    stats
}

/// Aggregate metrics, with the counts behind them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mae: f64,
    pub iou: f64,
    /// `None` when no tile had a defined correlation.
    pub pearson: Option<f64>,
    pub n_valid: usize,
    pub n_tree_gt: usize,
    pub n_tree_pred: usize,
    pub aggregation: Aggregation,
    pub n_tiles: usize,
    pub n_tiles_without_valid: usize,
    pub n_pearson_undefined: usize,
    pub n_empty_union: usize,
}

/// One row of the per-tile table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileRow {
    #[serde(flatten)]
    pub key: TileKey,
    pub mae: Option<f64>,
    pub iou: Option<f64>,
    pub empty_union: bool,
    pub pearson: Option<f64>,
    pub n_valid: usize,
    pub n_tree_gt: usize,
    pub n_tree_pred: usize,
    pub degenerate_normalization: bool,
}

impl From<&TileStats> for TileRow {
    fn from(s: &TileStats) -> Self {
        let iou = s.iou();
        let has_valid = s.n_valid > 0;
        TileRow {
            key: s.key.clone(),
            mae: s.mae(),
            iou: has_valid.then_some(iou.value),
            empty_union: has_valid && iou.empty_union,
            pearson: s.pearson,
            n_valid: s.n_valid,
            n_tree_gt: s.n_tree_gt,
            n_tree_pred: s.n_tree_pred,
            degenerate_normalization: s.degenerate_normalization,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub aggregate: MetricReport,
    pub tiles: Vec<TileRow>,
}

/// Folds tiles in slice order. Tiles without valid pixels are counted and
/// otherwise ignored.
pub fn aggregate(tiles: &[TileStats], aggregation: Aggregation) -> Result<MetricReport, MetricError> {
    let used: Vec<&TileStats> = tiles.iter().filter(|t| t.n_valid > 0).collect();
    if used.is_empty() {
        return Err(MetricError::NoValidPixels);
    }
    let defined_pc: NeumaierSum = used.iter().filter_map(|t| t.pearson).collect();
    let n_pc = used.iter().filter(|t| t.pearson.is_some()).count();

    let (mae, iou) = match aggregation {
        Aggregation::Micro => {
            let mut abs = NeumaierSum::new();
            let (mut n, mut inter, mut union) = (0, 0, 0);
            for t in &used {
                abs.merge(&t.abs_error);
                n += t.n_valid;
                inter += t.intersection;
                union += t.union;
            }
            (abs.value() / n as f64, IouValue::from_counts(inter, union).value)
        }
        Aggregation::Macro => {
            let maes: NeumaierSum = used.iter().filter_map(|t| t.mae()).collect();
            let ious: NeumaierSum = used.iter().map(|t| t.iou().value).collect();
            (maes.value() / used.len() as f64, ious.value() / used.len() as f64)
        }
    };
    Ok(MetricReport {
        mae,
        iou,
        pearson: (n_pc > 0).then(|| defined_pc.value() / n_pc as f64),
        n_valid: used.iter().map(|t| t.n_valid).sum(),
        n_tree_gt: used.iter().map(|t| t.n_tree_gt).sum(),
        n_tree_pred: used.iter().map(|t| t.n_tree_pred).sum(),
        aggregation,
        n_tiles: tiles.len(),
        n_tiles_without_valid: tiles.len() - used.len(),
        n_pearson_undefined: used.len() - n_pc,
        n_empty_union: used.iter().filter(|t| t.iou().empty_union).count(),
    })
}

/// Builds the report from tile statistics already in tile order.
pub fn build_report(tiles: &[TileStats], cfg: &EvalConfig) -> Result<EvalReport, MetricError> {
    Ok(EvalReport {
        config: *cfg,
        aggregate: aggregate(tiles, cfg.aggregation)?,
        tiles: tiles.iter().map(TileRow::from).collect(),
    })
}

/// Single-threaded reference evaluation.
pub fn evaluate_serial(pairs: &[(TileKey, EvalPair)], cfg: &EvalConfig) -> Result<EvalReport, MetricError> {
    let mut ranges = DatasetRanges::default();
    if cfg.normalize_scope == NormalizeScope::PerDataset {
        pairs.iter().for_each(|(_, p)| ranges.include(p));
    }
    let stats: Vec<TileStats> = pairs.iter().map(|(k, p)| tile_stats(k.clone(), p, cfg, &ranges)).collect();
    build_report(&stats, cfg)
}
