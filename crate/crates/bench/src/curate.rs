//! Manifest curation: external quality scoring, quality and empty-canopy
//! filters, and the split KS report.

use std::path::{Path, PathBuf};
use std::process::Command;

use canopy_core::curation::{
    self, has_canopy, split_distribution_report, ExclusionReason, SampleRecord, SplitComparison, SplitReportError,
    SplitSampling,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::read_any;
use crate::json;
use crate::workers::pool;

/// Manifest file: a JSON array of records.
pub fn read_manifest(path: &Path) -> Result<Vec<SampleRecord>> {
    let records: Vec<SampleRecord> = json::read(path)?;
    for r in &records {
        r.validate()?;
    }
    Ok(records)
}

pub fn write_manifest(path: &Path, records: &[SampleRecord]) -> Result<()> {
    json::write(path, &records)
}

/// Resolves a manifest path against the manifest's own directory.
pub fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[derive(Debug, Clone)]
pub struct CurateOptions {
    pub quality_threshold: f64,
    pub ks_report: bool,
    pub sampling: SplitSampling,
    /// Shell command run per unscored record; `{image}` is replaced by the
    /// quoted image path, which is also exported as `CANOPY_IMAGE`.
    pub score_cmd: Option<String>,
    pub workers: usize,
    /// Directory relative record paths are resolved against.
    pub base_dir: PathBuf,
}

impl Default for CurateOptions {
    fn default() -> Self {
        Self {
            quality_threshold: curation::DEFAULT_QUALITY_THRESHOLD,
            ks_report: false,
            sampling: SplitSampling::default(),
            score_cmd: None,
            workers: 1,
            base_dir: PathBuf::from("."),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsReport {
    pub sampling: SplitSampling,
    pub comparisons: Vec<SplitComparison>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurateOutput {
    pub records: Vec<SampleRecord>,
    pub ks: Option<KsReport>,
}

impl CurateOutput {
    pub fn count(&self, reason: ExclusionReason) -> usize {
        self.records.iter().filter(|r| r.exclusion_reason == reason).count()
    }
}

fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

/// Runs the scorer for one image and parses the first token of its output.
pub fn run_score_cmd(cmd: &str, image: &Path) -> Result<f64> {
    let image_str = image.to_string_lossy();
    let script = cmd.replace("{image}", &shell_quote(&image_str));
    let fail = |reason: String| Error::ScoreCommand { image: image_str.to_string(), reason };
    let out = Command::new("sh")
        .arg("-c")
        .arg(&script)
        .env("CANOPY_IMAGE", image)
        .output()
        .map_err(|e| fail(e.to_string()))?;
    if !out.status.success() {
        return Err(fail(format!("exited with {}", out.status)));
    }
    let stdout = String::from_utf8_lossy(&out.stdout);
    let token = stdout.split_whitespace().next().ok_or_else(|| fail("no output".into()))?;
    let score: f64 = token.parse().map_err(|_| fail(format!("{token:?} is not a number")))?;
    if !(0.0..=curation::MAX_QUALITY_SCORE).contains(&score) {
        return Err(fail(format!("score {score} outside [0, 5]")));
    }
    Ok(score)
}

fn tag(id: &str) -> impl FnOnce(Error) -> Error + '_ {
    move |e| Error::Record { id: id.to_string(), source: Box::new(e) }
}

pub fn curate(mut records: Vec<SampleRecord>, opts: &CurateOptions) -> Result<CurateOutput> {
    let pool = pool(opts.workers)?;
    let base = &opts.base_dir;

    if let Some(cmd) = &opts.score_cmd {
        let scores: Vec<Option<Result<f64>>> = pool.install(|| {
            records
                .par_iter()
                .map(|r| {
                    r.quality_score
                        .is_none()
                        .then(|| run_score_cmd(cmd, &resolve(base, &r.image_path)).map_err(tag(&r.id)))
                })
                .collect()
        });
        for (r, s) in records.iter_mut().zip(scores) {
            if let Some(s) = s {
                r.quality_score = Some(s?);
            }
        }
    }

    let mut records = curation::filter_by_quality(records, opts.quality_threshold)?;

    // Reads run in parallel; decisions are applied in record order so the
    // reported error is always the first failing record.
    let decisions: Vec<Option<Result<bool>>> = pool.install(|| {
        records
            .par_iter()
            .map(|r| (!r.is_excluded()).then(|| read_any(&resolve(base, &r.chm_path)).map(|chm| has_canopy(&chm))))
            .collect()
    });
    for (r, decision) in records.iter_mut().zip(decisions) {
        if let Some(decision) = decision {
            if !decision.map_err(tag(&r.id))? {
                r.exclude(ExclusionReason::EmptyCanopy);
            }
        }
    }

    let ks = if opts.ks_report {
        let comparisons =
            split_distribution_report(&records, &opts.sampling, |r| read_any(&resolve(base, &r.chm_path))).map_err(
                |e| match e {
                    SplitReportError::Load(l) => Error::Record { id: l.id, source: Box::new(l.source) },
                    SplitReportError::Curation(c) => Error::Curation(c),
                },
            )?;
        Some(KsReport { sampling: opts.sampling, comparisons })
    } else {
        None
    };
    Ok(CurateOutput { records, ks })
}
