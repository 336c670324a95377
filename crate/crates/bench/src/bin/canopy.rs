use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use canopy_bench::curate::{curate, read_manifest, resolve, write_manifest, CurateOptions};
use canopy_bench::evaluate::{evaluate, manifest_ids, summary_text, EvalJob};
use canopy_bench::io::{read_any, write_raster};
use canopy_bench::pipeline::{
    parse_normalize, parse_pc_region, render_run_reports, run_pipeline, RunReport, EXIT_CONFIG, EXIT_STAGE,
};
use canopy_bench::scenes::{write_desk_v1, write_perturbed, write_scene};
use canopy_bench::workers::resolve_workers;
use canopy_bench::{json, Error};
use canopy_core::chm::{derivation_anomalies, derive_chm, ElevationPair, DEFAULT_MAX_HEIGHT};
use canopy_core::cost::{cost_footer, estimate_cost, CostRates, RunManifest};
use canopy_core::curation::{
    ExclusionReason, HeightSource, Split, SplitSampling, DEFAULT_QUALITY_THRESHOLD, DEFAULT_SUBSAMPLE_SIZE,
};
use canopy_core::metrics::{Aggregation, EvalConfig, NormalizeScope, PcRegion, DEFAULT_TREE_THRESHOLD};
use canopy_core::synth::{PerturbModel, SceneSpec};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Canopy height benchmarking toolkit.
#[derive(Parser)]
#[command(name = "canopy", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Canopy height model derivation.
    #[command(subcommand)]
    Chm(ChmCommand),
    /// Filter a manifest by quality score and empty canopy.
    Curate(CurateArgs),
    /// Score prediction rasters against ground truth.
    Evaluate(EvaluateArgs),
    /// Generate synthetic DSM/DTM/CHM scenes.
    Synth(SynthArgs),
    /// Write perturbed copies of ground-truth CHMs as pseudo-predictions.
    Perturb(PerturbArgs),
    /// Convert a raster (GeoTIFF or CHMF) to CHMF.
    Convert {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate training cost and CO2 from wall-clock hours.
    Cost(CostArgs),
    /// Render a benchmark table from pipeline report.json files.
    Table {
        #[arg(long, num_args = 1.., required = true)]
        rows: Vec<PathBuf>,
    },
    /// Run a staged pipeline from a TOML config.
    Run { config: PathBuf },
}

#[derive(Subcommand)]
enum ChmCommand {
    /// CHM = DSM - DTM with nodata union and optional negative clamp.
    Derive {
        #[arg(long)]
        dsm: PathBuf,
        #[arg(long)]
        dtm: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        no_clamp: bool,
        #[arg(long, default_value_t = DEFAULT_MAX_HEIGHT)]
        max_height: f32,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum HeightSourceArg {
    Pixels,
    SampleMax,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args)]
struct CurateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = DEFAULT_QUALITY_THRESHOLD)]
    quality_threshold: f64,
    #[arg(long)]
    out: PathBuf,
    /// Compare train-val and train-test height distributions; the report is
    /// also written next to the output as `<out>.ks.json`.
    #[arg(long)]
    ks_report: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = HeightSourceArg::Pixels)]
    height_source: HeightSourceArg,
    #[arg(long, default_value_t = DEFAULT_SUBSAMPLE_SIZE)]
    subsample_size: usize,
    /// Scorer for records without a quality score; `{image}` expands to the
    /// image path.
    #[arg(long)]
    score_cmd: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum AggArg {
    Micro,
    Macro,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    PerTile,
    PerDataset,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    pred_dir: PathBuf,
    #[arg(long)]
    gt_dir: PathBuf,
    /// Restrict to non-excluded manifest records, in manifest order.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, value_enum, requires = "manifest")]
    split: Option<SplitArg>,
    #[arg(long, default_value_t = DEFAULT_TREE_THRESHOLD)]
    threshold: f64,
    #[arg(long, value_enum, default_value_t = AggArg::Micro)]
    agg: AggArg,
    /// `pred,gt`, `pred`, `gt` or `none`.
    #[arg(long, default_value = "pred,gt", value_parser = parse_normalize)]
    normalize: (bool, bool),
    #[arg(long, value_enum, default_value_t = ScopeArg::PerTile)]
    normalize_scope: ScopeArg,
    /// `gt` or `union`.
    #[arg(long, default_value = "gt", value_parser = parse_pc_region)]
    pc_region: PcRegion,
    /// Tree masks on raw metric heights when the rasters are in meters.
    #[arg(long)]
    mask_on_metric_heights: bool,
    #[arg(long)]
    tile_size: Option<u32>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    report: PathBuf,
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["spec", "desk_v1"])))]
struct SynthArgs {
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Generate the 12-scene desk-v1 corpus with its manifest.
    #[arg(long)]
    desk_v1: bool,
    /// Scene id for `--spec`; defaults to the spec file stem.
    #[arg(long)]
    id: Option<String>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum PerturbArg {
    Scale,
    Blur,
    DropoutSmallTrees,
}

#[derive(Args)]
struct PerturbArgs {
    #[arg(long)]
    gt_dir: PathBuf,
    #[arg(long, value_enum)]
    model: PerturbArg,
    #[arg(long)]
    magnitude: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct CostArgs {
    #[arg(long)]
    hours: f64,
    #[arg(long)]
    price: Option<f64>,
    #[arg(long)]
    power: Option<f64>,
    #[arg(long)]
    intensity: Option<f64>,
}

enum Failure {
    Config(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

type Outcome = Result<(), Failure>;

fn chm_derive(dsm: &Path, dtm: &Path, out: &Path, clamp: bool, max_height: f32) -> Outcome {
    let pair = ElevationPair::new(read_any(dsm)?, read_any(dtm)?).map_err(Error::from)?;
    let derived = derive_chm(&pair, clamp);
    write_raster(&derived.chm, out)?;
    for a in derivation_anomalies(&derived, max_height) {
        println!("{a}");
    }
    Ok(())
}

fn ks_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".ks.json");
    out.with_file_name(name)
}

fn run_curate(a: CurateArgs) -> Outcome {
    let base_dir = a.manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let opts = CurateOptions {
        quality_threshold: a.quality_threshold,
        ks_report: a.ks_report,
        sampling: SplitSampling {
            source: match a.height_source {
                HeightSourceArg::Pixels => HeightSource::PerPixelSubsample,
                HeightSourceArg::SampleMax => HeightSource::PerSampleMax,
            },
            subsample_size: a.subsample_size,
            seed: a.seed,
        },
        score_cmd: a.score_cmd,
        workers: resolve_workers(a.workers),
        base_dir: base_dir.clone(),
    };
    let mut out = curate(read_manifest(&a.manifest)?, &opts)?;
    let out_dir = a.out.parent().map(Path::to_path_buf).unwrap_or_default();
    if fs::canonicalize(&out_dir).ok() != fs::canonicalize(&base_dir).ok() {
        for r in &mut out.records {
            r.chm_path = absolute(&base_dir, &r.chm_path);
            r.image_path = absolute(&base_dir, &r.image_path);
        }
    }
    write_manifest(&a.out, &out.records)?;
    let kept = out.records.iter().filter(|r| !r.is_excluded()).count();
    println!(
        "kept={kept} low_quality={} empty_canopy={}",
        out.count(ExclusionReason::LowQuality),
        out.count(ExclusionReason::EmptyCanopy)
    );
    if let Some(ks) = &out.ks {
        for c in &ks.comparisons {
            println!("{c}");
        }
        json::write(&ks_path(&a.out), ks)?;
    }
    Ok(())
}

fn absolute(base: &Path, p: &str) -> String {
    let path = resolve(base, p);
    fs::canonicalize(&path).unwrap_or(path).to_string_lossy().into_owned()
}

fn run_evaluate(a: EvaluateArgs) -> Outcome {
    let ids = match &a.manifest {
        Some(m) => Some(manifest_ids(&read_manifest(m)?, a.split.map(Split::from))),
        None => None,
    };
    let (normalize_prediction, normalize_ground_truth) = a.normalize;
    let config = EvalConfig {
        threshold: a.threshold,
        aggregation: match a.agg {
            AggArg::Micro => Aggregation::Micro,
            AggArg::Macro => Aggregation::Macro,
        },
        normalize_prediction,
        normalize_ground_truth,
        normalize_scope: match a.normalize_scope {
            ScopeArg::PerTile => NormalizeScope::PerTile,
            ScopeArg::PerDataset => NormalizeScope::PerDataset,
        },
        pc_region: a.pc_region,
        mask_on_metric_heights: a.mask_on_metric_heights,
    };
    let job = EvalJob {
        pred_dir: a.pred_dir,
        gt_dir: a.gt_dir,
        ids,
        tile_size: a.tile_size,
        workers: resolve_workers(a.workers),
        config,
    };
    let report = evaluate(&job)?;
    json::write(&a.report, &report)?;
    print!("{}", summary_text(&report));
    Ok(())
}

fn run_synth(a: SynthArgs) -> Outcome {
    if a.desk_v1 {
        let records = write_desk_v1(&a.out_dir)?;
        println!("wrote {} scenes to {}", records.len(), a.out_dir.display());
        return Ok(());
    }
    let spec_path = a.spec.expect("clap enforces one source");
    let spec: SceneSpec = json::read(&spec_path)?;
    let id = match a.id {
        Some(id) => id,
        None => spec_path.file_stem().unwrap_or_default().to_string_lossy().into_owned(),
    };
    write_scene(&spec, &id, &a.out_dir)?;
    println!("wrote scene {id} to {}", a.out_dir.display());
    Ok(())
}

fn run_perturb(a: PerturbArgs) -> Outcome {
    let model = match a.model {
        PerturbArg::Scale => PerturbModel::Scale,
        PerturbArg::Blur => PerturbModel::Blur,
        PerturbArg::DropoutSmallTrees => PerturbModel::DropoutSmallTrees,
    };
    let written = write_perturbed(&a.gt_dir, model, a.magnitude, a.seed, &a.out_dir)?;
    println!("wrote {} predictions to {}", written.len(), a.out_dir.display());
    Ok(())
}

fn run_cost(a: CostArgs) -> Outcome {
    let defaults = CostRates::default();
    let rates = CostRates {
        price_per_hour: a.price.unwrap_or(defaults.price_per_hour),
        gpu_power_kw: a.power.unwrap_or(defaults.gpu_power_kw),
        carbon_intensity: a.intensity.unwrap_or(defaults.carbon_intensity),
    };
    let manifest = RunManifest::new("cli", "cli", a.hours, rates);
    manifest.validate().map_err(|e| Failure::Config(e.to_string()))?;
    println!("{}", estimate_cost(&manifest));
    println!("{}", cost_footer(&rates));
    Ok(())
}

fn run_table(rows: &[PathBuf]) -> Outcome {
    let reports = rows.iter().map(|p| json::read::<RunReport>(p)).collect::<Result<Vec<_>, _>>()?;
    print!("{}", render_run_reports(&reports, &CostRates::default()));
    Ok(())
}

fn dispatch(command: Command) -> Outcome {
    match command {
        Command::Chm(ChmCommand::Derive { dsm, dtm, out, no_clamp, max_height }) => {
            chm_derive(&dsm, &dtm, &out, !no_clamp, max_height)
        }
        Command::Curate(a) => run_curate(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Synth(a) => run_synth(a),
        Command::Perturb(a) => run_perturb(a),
        Command::Convert { input, out } => Ok(write_raster(&read_any(&input)?, &out)?),
        Command::Cost(a) => run_cost(a),
        Command::Table { rows } => run_table(&rows),
        Command::Run { .. } => unreachable!("handled in main"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Command::Run { config } = &cli.command {
        return ExitCode::from(run_pipeline(config) as u8);
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG as u8)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_STAGE as u8)
        }
    }
}
