//! Staged pipeline: ingest -> chm -> curate -> evaluate -> report.
//!
//! Stages run in that order when their table is present in the config.
//! Each completed stage leaves `<work>/stages/<name>.json` holding a SHA-256
//! over its configuration and input file contents plus hashes of its outputs;
//! a re-run with the same inputs and intact outputs skips the stage.
//!
//! ```toml
//! work_dir = "work"          # relative to this file; default "work"
//! workers = 4                # CANOPY_BENCH_WORKERS overrides
//!
//! [ingest]
//! manifest = "manifest.json"
//!
//! [chm]
//! dsm_dir = "dsm"
//! dtm_dir = "dtm"
//! clamp_negative = true
//! max_height = 120.0
//!
//! [curate]
//! quality_threshold = 2.5
//! ks_report = true
//! seed = 0
//! subsample_size = 100000
//! height_source = "per_pixel_subsample"   # or "per_sample_max"
//! # score_cmd = "my-scorer {image}"
//!
//! [evaluate]
//! pred_dir = "preds"
//! gt_dir = "chm"             # default: output of [chm]
//! # split = "test"
//! threshold = 1e-4
//! aggregation = "micro"      # or "macro"
//! normalize = "pred,gt"      # "pred", "gt" or "none"
//! normalize_scope = "per_tile"
//! pc_region = "gt"           # or "union"
//! # tile_size = 64
//!
//! [report]
//! model_id = "DAC-S"
//! dataset_id = "desk-v1"
//! wall_hours = 1.5
//! # n_params_millions, gflops, finetuned, gpu_name, gpu_power_kw,
//! # price_per_hour, carbon_intensity, extra_rows = ["other/report.json"]
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use canopy_core::chm::{derivation_anomalies, derive_chm, Anomaly, ElevationPair, DEFAULT_MAX_HEIGHT};
use canopy_core::cost::{
    cost_footer, estimate_cost, render_benchmark_table, BenchmarkRow, CostRates, CostReport, RunManifest,
    DEFAULT_CARBON_INTENSITY, DEFAULT_GPU_NAME, DEFAULT_GPU_POWER_KW, DEFAULT_PRICE_PER_HOUR,
};
use canopy_core::curation::{HeightSource, Split, SplitSampling, DEFAULT_QUALITY_THRESHOLD, DEFAULT_SUBSAMPLE_SIZE};
use canopy_core::metrics::{Aggregation, EvalConfig, EvalReport, NormalizeScope, PcRegion, DEFAULT_TREE_THRESHOLD};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::curate::{curate, read_manifest, resolve, write_manifest, CurateOptions};
use crate::error::{Error, Result};
use crate::evaluate::{evaluate, list_rasters, manifest_ids, summary_text, EvalJob};
use crate::io::{read_any, write_raster, RasterFormat};
use crate::json;
use crate::workers::resolve_workers;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_STAGE: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("stage {stage} failed: {cause}")]
    StageFailure { stage: &'static str, cause: Error },
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => EXIT_CONFIG,
            PipelineError::StageFailure { .. } => EXIT_STAGE,
        }
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestStage {
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChmStage {
    pub dsm_dir: PathBuf,
    pub dtm_dir: PathBuf,
    #[serde(default = "yes")]
    pub clamp_negative: bool,
    #[serde(default = "default_max_height")]
    pub max_height: f32,
}

fn default_max_height() -> f32 {
    DEFAULT_MAX_HEIGHT
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurateStage {
    /// Defaults to the ingest output.
    pub manifest: Option<PathBuf>,
    #[serde(default = "default_quality_threshold")]
    pub quality_threshold: f64,
    #[serde(default = "yes")]
    pub ks_report: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_subsample")]
    pub subsample_size: usize,
    #[serde(default = "default_height_source")]
    pub height_source: HeightSource,
    pub score_cmd: Option<String>,
}

fn default_quality_threshold() -> f64 {
    DEFAULT_QUALITY_THRESHOLD
}
fn default_subsample() -> usize {
    DEFAULT_SUBSAMPLE_SIZE
}
fn default_height_source() -> HeightSource {
    HeightSource::PerPixelSubsample
}

/// `--normalize` values: `pred,gt`, `pred`, `gt` or `none`.
pub fn parse_normalize(s: &str) -> std::result::Result<(bool, bool), String> {
    let mut flags = (false, false);
    if s.trim() == "none" {
        return Ok(flags);
    }
    for part in s.split(',').map(str::trim) {
        match part {
            "pred" => flags.0 = true,
            "gt" => flags.1 = true,
            other => return Err(format!("unknown normalize target {other:?} (expected pred, gt or none)")),
        }
    }
    Ok(flags)
}

pub fn parse_pc_region(s: &str) -> std::result::Result<PcRegion, String> {
    match s {
        "gt" => Ok(PcRegion::GtTree),
        "union" => Ok(PcRegion::UnionTree),
        other => Err(format!("unknown PC region {other:?} (expected gt or union)")),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateStage {
    pub pred_dir: PathBuf,
    /// Defaults to the chm stage output.
    pub gt_dir: Option<PathBuf>,
    /// Defaults to the curate output, else the ingest output, else every file.
    pub manifest: Option<PathBuf>,
    pub split: Option<Split>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default = "default_normalize")]
    pub normalize: String,
    #[serde(default)]
    pub normalize_scope: NormalizeScope,
    #[serde(default = "default_pc_region")]
    pub pc_region: String,
    pub tile_size: Option<u32>,
}

fn default_threshold() -> f64 {
    DEFAULT_TREE_THRESHOLD
}
fn default_normalize() -> String {
    "pred,gt".into()
}
fn default_pc_region() -> String {
    "gt".into()
}

impl EvaluateStage {
    pub fn eval_config(&self) -> std::result::Result<EvalConfig, String> {
        let (normalize_prediction, normalize_ground_truth) = parse_normalize(&self.normalize)?;
        Ok(EvalConfig {
            threshold: self.threshold,
            aggregation: self.aggregation,
            normalize_prediction,
            normalize_ground_truth,
            normalize_scope: self.normalize_scope,
            pc_region: parse_pc_region(&self.pc_region)?,
            ..EvalConfig::default()
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportStage {
    pub model_id: String,
    pub dataset_id: String,
    #[serde(default)]
    pub wall_hours: f64,
    #[serde(default)]
    pub n_params_millions: f64,
    #[serde(default)]
    pub gflops: f64,
    #[serde(default)]
    pub finetuned: bool,
    #[serde(default = "default_gpu")]
    pub gpu_name: String,
    #[serde(default = "default_power")]
    pub gpu_power_kw: f64,
    #[serde(default = "default_price")]
    pub price_per_hour: f64,
    #[serde(default = "default_intensity")]
    pub carbon_intensity: f64,
    /// Earlier `report.json` files to include as extra table rows.
    #[serde(default)]
    pub extra_rows: Vec<PathBuf>,
}

fn default_gpu() -> String {
    DEFAULT_GPU_NAME.into()
}
fn default_power() -> f64 {
    DEFAULT_GPU_POWER_KW
}
fn default_price() -> f64 {
    DEFAULT_PRICE_PER_HOUR
}
fn default_intensity() -> f64 {
    DEFAULT_CARBON_INTENSITY
}

impl ReportStage {
    pub fn manifest(&self) -> RunManifest {
        RunManifest {
            model_id: self.model_id.clone(),
            n_params_millions: self.n_params_millions,
            gflops: self.gflops,
            finetuned: self.finetuned,
            dataset_id: self.dataset_id.clone(),
            wall_hours: self.wall_hours,
            gpu_name: self.gpu_name.clone(),
            gpu_power_kw: self.gpu_power_kw,
            price_per_hour: self.price_per_hour,
            carbon_intensity: self.carbon_intensity,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub work_dir: Option<PathBuf>,
    pub workers: Option<usize>,
    pub ingest: Option<IngestStage>,
    pub chm: Option<ChmStage>,
    pub curate: Option<CurateStage>,
    pub evaluate: Option<EvaluateStage>,
    pub report: Option<ReportStage>,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> std::result::Result<Self, PipelineError> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> std::result::Result<(), PipelineError> {
        let config = |m: &str| Err(PipelineError::Config(m.into()));
        if self.ingest.is_none()
            && self.chm.is_none()
            && self.curate.is_none()
            && self.evaluate.is_none()
            && self.report.is_none()
        {
            return config("no stage configured");
        }
        if let Some(c) = &self.curate {
            if c.manifest.is_none() && self.ingest.is_none() {
                return config("[curate] needs `manifest` or an [ingest] stage");
            }
        }
        if let Some(e) = &self.evaluate {
            if e.gt_dir.is_none() && self.chm.is_none() {
                return config("[evaluate] needs `gt_dir` or a [chm] stage");
            }
            e.eval_config().map_err(PipelineError::Config)?;
        }
        if self.report.is_some() && self.evaluate.is_none() {
            return config("[report] needs an [evaluate] stage");
        }
        if self.workers == Some(0) {
            return config("workers must be at least 1");
        }
        Ok(())
    }
}

/// Everything a report stage writes, also readable as an extra table row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub row: BenchmarkRow,
    pub cost: CostReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StageRecord {
    stage: String,
    input_hash: String,
    outputs: BTreeMap<String, String>,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    Ok(format!("{:x}", Sha256::digest(bytes)))
}

/// Hash of the stage name, its config, and every input's path and contents.
fn input_hash(stage: &str, config: &impl Serialize, inputs: &[PathBuf]) -> Result<String> {
    let mut h = Sha256::new();
    h.update(stage.as_bytes());
    h.update(serde_json::to_vec(config).expect("stage configs serialize"));
    let mut sorted: Vec<&PathBuf> = inputs.iter().collect();
    sorted.sort();
    sorted.dedup();
    for p in sorted {
        h.update(p.to_string_lossy().as_bytes());
        h.update([0]);
        h.update(sha256_file(p)?.as_bytes());
    }
    Ok(format!("{:x}", h.finalize()))
}

pub struct Pipeline {
    base: PathBuf,
    work: PathBuf,
    workers: usize,
    config: PipelineConfig,
    log: Vec<String>,
    echo: bool,
}

/// Work-directory outputs of each stage.
pub struct StagePaths;

impl StagePaths {
    pub const INGEST_MANIFEST: &'static str = "ingest/manifest.json";
    pub const CHM_DIR: &'static str = "chm";
    pub const CHM_ANOMALIES: &'static str = "chm/anomalies.json";
    pub const CURATED_MANIFEST: &'static str = "curate/manifest.json";
    pub const KS_REPORT: &'static str = "curate/ks.json";
    pub const EVAL_REPORT: &'static str = "evaluate/report.json";
    pub const EVAL_SUMMARY: &'static str = "evaluate/summary.txt";
    pub const RUN_REPORT: &'static str = "report/report.json";
    pub const RUN_TABLE: &'static str = "report/report.txt";
}

impl Pipeline {
    pub fn from_file(path: &Path) -> std::result::Result<Self, PipelineError> {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let config = PipelineConfig::parse(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let base = if base.as_os_str().is_empty() { PathBuf::from(".") } else { base };
        Ok(Self::new(config, base))
    }

    pub fn new(config: PipelineConfig, base: PathBuf) -> Self {
        let work = base.join(config.work_dir.clone().unwrap_or_else(|| PathBuf::from("work")));
        let workers = resolve_workers(config.workers);
        Self { base, work, workers, config, log: Vec::new(), echo: false }
    }

    pub fn work_dir(&self) -> &Path {
        &self.work
    }

    pub fn log(&self) -> &[String] {
        &self.log
    }

    /// Print each stage status line to standard output as it is logged.
    pub fn echo(mut self, on: bool) -> Self {
        self.echo = on;
        self
    }

    fn note(&mut self, line: String) {
        if self.echo {
            println!("{line}");
        }
        self.log.push(line);
    }

    fn at(&self, p: &Path) -> PathBuf {
        resolve(&self.base, &p.to_string_lossy())
    }

    fn out(&self, rel: &str) -> PathBuf {
        self.work.join(rel)
    }

    fn stage<C: Serialize>(
        &mut self,
        name: &'static str,
        config: &C,
        inputs: impl FnOnce(&Self) -> Result<Vec<PathBuf>>,
        body: impl FnOnce(&Self) -> Result<Vec<PathBuf>>,
    ) -> std::result::Result<(), PipelineError> {
        let fail = |cause| PipelineError::StageFailure { stage: name, cause };
        let hash = input_hash(name, config, &inputs(self).map_err(fail)?).map_err(fail)?;
        let record_path = self.out(&format!("stages/{name}.json"));
        if let Ok(prev) = json::read::<StageRecord>(&record_path) {
            let intact = prev.outputs.iter().all(|(p, h)| sha256_file(Path::new(p)).is_ok_and(|cur| &cur == h));
            if prev.input_hash == hash && intact {
                self.note(format!("stage {name}: skipped"));
                return Ok(());
            }
        }
        let outputs = body(self).map_err(fail)?;
        let outputs = outputs
            .iter()
            .map(|p| Ok((p.to_string_lossy().into_owned(), sha256_file(p)?)))
            .collect::<Result<BTreeMap<_, _>>>()
            .map_err(fail)?;
        json::write(&record_path, &StageRecord { stage: name.into(), input_hash: hash, outputs }).map_err(fail)?;
        self.note(format!("stage {name}: ran"));
        Ok(())
    }

    pub fn run(&mut self) -> std::result::Result<(), PipelineError> {
        fs::create_dir_all(&self.work)
            .map_err(|e| PipelineError::Config(format!("cannot create work dir {}: {e}", self.work.display())))?;
        if let Some(stage) = self.config.ingest.clone() {
            self.stage("ingest", &stage, |p| ingest_inputs(p, &stage), |p| run_ingest(p, &stage))?;
        }
        if let Some(stage) = self.config.chm.clone() {
            self.stage("chm", &stage, |p| chm_inputs(p, &stage), |p| run_chm(p, &stage))?;
        }
        if let Some(stage) = self.config.curate.clone() {
            self.stage("curate", &stage, |p| curate_inputs(p, &stage), |p| run_curate(p, &stage))?;
        }
        if let Some(stage) = self.config.evaluate.clone() {
            self.stage("evaluate", &stage, |p| evaluate_inputs(p, &stage), |p| run_evaluate(p, &stage))?;
        }
        if let Some(stage) = self.config.report.clone() {
            self.stage("report", &stage, |p| report_inputs(p, &stage), |p| run_report(p, &stage))?;
        }
        Ok(())
    }
}

fn ingest_inputs(p: &Pipeline, stage: &IngestStage) -> Result<Vec<PathBuf>> {
    let manifest = p.at(&stage.manifest);
    let base = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let records = read_manifest(&manifest)?;
    let mut inputs = vec![manifest];
    inputs.extend(records.iter().map(|r| resolve(&base, &r.chm_path)));
    Ok(inputs)
}

/// Validates the manifest, converts GeoTIFF CHMs to CHMF and writes a
/// manifest with absolute paths.
fn run_ingest(p: &Pipeline, stage: &IngestStage) -> Result<Vec<PathBuf>> {
    let manifest = p.at(&stage.manifest);
    let base = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let base = fs::canonicalize(&base).map_err(Error::io(&base))?;
    let chm_dir = p.out("ingest/chm");
    let mut outputs = Vec::new();
    let mut records = read_manifest(&manifest)?;
    for r in &mut records {
        let chm = resolve(&base, &r.chm_path);
        let chm = if RasterFormat::from_path(&chm) == RasterFormat::Geotiff {
            fs::create_dir_all(&chm_dir).map_err(Error::io(&chm_dir))?;
            let converted = chm_dir.join(format!("{}.chmf", r.id));
            write_raster(&read_any(&chm)?, &converted)?;
            outputs.push(converted.clone());
            fs::canonicalize(&converted).map_err(Error::io(&converted))?
        } else {
            if !chm.is_file() {
                return Err(Error::Record {
                    id: r.id.clone(),
                    source: Box::new(Error::Input(format!("missing CHM {}", chm.display()))),
                });
            }
            chm
        };
        r.chm_path = chm.to_string_lossy().into_owned();
        r.image_path = resolve(&base, &r.image_path).to_string_lossy().into_owned();
    }
    let out = p.out(StagePaths::INGEST_MANIFEST);
    write_manifest(&out, &records)?;
    outputs.push(out);
    Ok(outputs)
}

fn chm_pairs(p: &Pipeline, stage: &ChmStage) -> Result<Vec<(PathBuf, PathBuf)>> {
    let (dsm_dir, dtm_dir) = (p.at(&stage.dsm_dir), p.at(&stage.dtm_dir));
    list_rasters(&dsm_dir)?
        .into_iter()
        .map(|dsm| {
            let dtm = dtm_dir.join(dsm.file_name().expect("listed files have names"));
            if !dtm.is_file() {
                return Err(Error::Input(format!("no DTM matching {}", dsm.display())));
            }
            Ok((dsm, dtm))
        })
        .collect()
}

fn chm_inputs(p: &Pipeline, stage: &ChmStage) -> Result<Vec<PathBuf>> {
    Ok(chm_pairs(p, stage)?.into_iter().flat_map(|(a, b)| [a, b]).collect())
}

#[derive(Serialize)]
struct ChmAnomalies<'a> {
    id: &'a str,
    anomalies: Vec<Anomaly>,
}

fn run_chm(p: &Pipeline, stage: &ChmStage) -> Result<Vec<PathBuf>> {
    let out_dir = p.out(StagePaths::CHM_DIR);
    fs::create_dir_all(&out_dir).map_err(Error::io(&out_dir))?;
    let mut outputs = Vec::new();
    let mut report = Vec::new();
    let pairs = chm_pairs(p, stage)?;
    let ids: Vec<String> = pairs.iter().map(|(d, _)| d.file_stem().unwrap().to_string_lossy().into_owned()).collect();
    for ((dsm, dtm), id) in pairs.iter().zip(&ids) {
        let pair = ElevationPair::new(read_any(dsm)?, read_any(dtm)?)
            .map_err(|e| Error::Record { id: id.clone(), source: Box::new(e.into()) })?;
        let derived = derive_chm(&pair, stage.clamp_negative);
        let out = out_dir.join(format!("{id}.chmf"));
        write_raster(&derived.chm, &out)?;
        outputs.push(out);
        report.push(ChmAnomalies { id, anomalies: derivation_anomalies(&derived, stage.max_height) });
    }
    let anomalies = p.out(StagePaths::CHM_ANOMALIES);
    json::write(&anomalies, &report)?;
    outputs.push(anomalies);
    Ok(outputs)
}

fn curate_manifest(p: &Pipeline, stage: &CurateStage) -> PathBuf {
    match &stage.manifest {
        Some(m) => p.at(m),
        None => p.out(StagePaths::INGEST_MANIFEST),
    }
}

fn curate_inputs(p: &Pipeline, stage: &CurateStage) -> Result<Vec<PathBuf>> {
    let manifest = curate_manifest(p, stage);
    let base = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let records = read_manifest(&manifest)?;
    let mut inputs = vec![manifest];
    inputs.extend(records.iter().map(|r| resolve(&base, &r.chm_path)).filter(|c| c.is_file()));
    Ok(inputs)
}

fn run_curate(p: &Pipeline, stage: &CurateStage) -> Result<Vec<PathBuf>> {
    let manifest = curate_manifest(p, stage);
    let opts = CurateOptions {
        quality_threshold: stage.quality_threshold,
        ks_report: stage.ks_report,
        sampling: SplitSampling { source: stage.height_source, subsample_size: stage.subsample_size, seed: stage.seed },
        score_cmd: stage.score_cmd.clone(),
        workers: p.workers,
        base_dir: manifest.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let mut out = curate(read_manifest(&manifest)?, &opts)?;
    // Keep the curated manifest usable from the work directory.
    for r in &mut out.records {
        r.chm_path = resolve(&opts.base_dir, &r.chm_path).to_string_lossy().into_owned();
        r.image_path = resolve(&opts.base_dir, &r.image_path).to_string_lossy().into_owned();
    }
    let curated = p.out(StagePaths::CURATED_MANIFEST);
    write_manifest(&curated, &out.records)?;
    let mut outputs = vec![curated];
    if let Some(ks) = &out.ks {
        let ks_path = p.out(StagePaths::KS_REPORT);
        json::write(&ks_path, ks)?;
        for c in &ks.comparisons {
            println!("{c}");
        }
        outputs.push(ks_path);
    }
    Ok(outputs)
}

fn evaluate_manifest(p: &Pipeline, stage: &EvaluateStage) -> Option<PathBuf> {
    if let Some(m) = &stage.manifest {
        return Some(p.at(m));
    }
    if p.config.curate.is_some() {
        return Some(p.out(StagePaths::CURATED_MANIFEST));
    }
    p.config.ingest.is_some().then(|| p.out(StagePaths::INGEST_MANIFEST))
}

fn eval_job(p: &Pipeline, stage: &EvaluateStage) -> Result<EvalJob> {
    let gt_dir = match &stage.gt_dir {
        Some(d) => p.at(d),
        None => p.out(StagePaths::CHM_DIR),
    };
    let ids = match evaluate_manifest(p, stage) {
        Some(m) => Some(manifest_ids(&read_manifest(&m)?, stage.split)),
        None => None,
    };
    Ok(EvalJob {
        pred_dir: p.at(&stage.pred_dir),
        gt_dir,
        ids,
        tile_size: stage.tile_size,
        workers: p.workers,
        config: stage.eval_config().map_err(Error::Input)?,
    })
}

fn evaluate_inputs(p: &Pipeline, stage: &EvaluateStage) -> Result<Vec<PathBuf>> {
    let job = eval_job(p, stage)?;
    let mut inputs: Vec<PathBuf> =
        crate::evaluate::pair_files(&job)?.into_iter().flat_map(|(_, g, pr)| [g, pr]).collect();
    inputs.extend(evaluate_manifest(p, stage));
    Ok(inputs)
}

fn run_evaluate(p: &Pipeline, stage: &EvaluateStage) -> Result<Vec<PathBuf>> {
    let report = evaluate(&eval_job(p, stage)?)?;
    let (json_path, text_path) = (p.out(StagePaths::EVAL_REPORT), p.out(StagePaths::EVAL_SUMMARY));
    json::write(&json_path, &report)?;
    let summary = summary_text(&report);
    print!("{summary}");
    fs::write(&text_path, summary).map_err(Error::io(&text_path))?;
    Ok(vec![json_path, text_path])
}

fn report_inputs(p: &Pipeline, stage: &ReportStage) -> Result<Vec<PathBuf>> {
    let mut inputs = vec![p.out(StagePaths::EVAL_REPORT)];
    inputs.extend(stage.extra_rows.iter().map(|r| p.at(r)));
    Ok(inputs)
}

/// Table, cost line and rate footer for a set of runs.
pub fn render_run_reports(reports: &[RunReport], rates: &CostRates) -> String {
    let rows: Vec<BenchmarkRow> = reports.iter().map(|r| r.row.clone()).collect();
    let mut text = render_benchmark_table(&rows);
    text.push('\n');
    for r in reports {
        let _ = writeln!(
            text,
            "{} ({:.2} h on {}): {}",
            r.row.manifest.model_id, r.row.manifest.wall_hours, r.row.manifest.gpu_name, r.cost
        );
    }
    let _ = writeln!(text, "{}", cost_footer(rates));
    text
}

fn run_report(p: &Pipeline, stage: &ReportStage) -> Result<Vec<PathBuf>> {
    let eval: EvalReport = json::read(&p.out(StagePaths::EVAL_REPORT))?;
    let manifest = stage.manifest();
    manifest.validate()?;
    let own = RunReport {
        cost: estimate_cost(&manifest),
        row: BenchmarkRow { manifest, results: vec![(stage.dataset_id.clone(), eval.aggregate)] },
    };
    let mut all = vec![own.clone()];
    for extra in &stage.extra_rows {
        all.push(json::read(&p.at(extra))?);
    }
    let rates = CostRates {
        gpu_power_kw: stage.gpu_power_kw,
        price_per_hour: stage.price_per_hour,
        carbon_intensity: stage.carbon_intensity,
    };
    let text = render_run_reports(&all, &rates);
    print!("{text}");
    let (json_path, text_path) = (p.out(StagePaths::RUN_REPORT), p.out(StagePaths::RUN_TABLE));
    json::write(&json_path, &own)?;
    fs::write(&text_path, text).map_err(Error::io(&text_path))?;
    Ok(vec![json_path, text_path])
}

/// Runs a config file, printing the stage log. Returns the process exit code.
pub fn run_pipeline(config: &Path) -> i32 {
    let mut pipeline = match Pipeline::from_file(config) {
        Ok(p) => p.echo(true),
        Err(e) => {
            eprintln!("{e}");
            return e.exit_code();
        }
    };
    match pipeline.run() {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
