//! Run manifests, compute-cost and carbon estimates, and the benchmark table.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::{self, Write};

use serde::{Deserialize, Serialize};

use crate::metrics::MetricReport;

/// Hourly GPU rental price, currency units per hour.
pub const DEFAULT_PRICE_PER_HOUR: f64 = 0.80;
/// Board power of an RTX A6000, kW.
pub const DEFAULT_GPU_POWER_KW: f64 = 0.30;
/// kg CO2 per kWh; with the default power this gives 0.14 kg for 1.5 h.
pub const DEFAULT_CARBON_INTENSITY: f64 = 0.311;
pub const DEFAULT_GPU_NAME: &str = "NVIDIA RTX A6000";

/// Rates applied when a manifest omits them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostRates {
    pub gpu_power_kw: f64,
    pub price_per_hour: f64,
    pub carbon_intensity: f64,
}

impl Default for CostRates {
    fn default() -> Self {
        Self {
            gpu_power_kw: DEFAULT_GPU_POWER_KW,
            price_per_hour: DEFAULT_PRICE_PER_HOUR,
            carbon_intensity: DEFAULT_CARBON_INTENSITY,
        }
    }
}

/// Provenance of a training or evaluation run. Parameter counts and GFLOPs
/// are carried through as reported, never measured here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub model_id: String,
    pub n_params_millions: f64,
    pub gflops: f64,
    pub finetuned: bool,
    pub dataset_id: String,
    pub wall_hours: f64,
    pub gpu_name: String,
    pub gpu_power_kw: f64,
    pub price_per_hour: f64,
    pub carbon_intensity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ManifestError {
    NegativeWallHours(f64),
    NonPositivePower(f64),
    NegativeCarbonIntensity(f64),
    NegativePrice(f64),
}

impl fmt::Display for ManifestError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ManifestError::NegativeWallHours(v) => write!(f, "wall_hours must be >= 0, got {v}"),
            ManifestError::NonPositivePower(v) => write!(f, "gpu_power_kw must be > 0, got {v}"),
            ManifestError::NegativeCarbonIntensity(v) => write!(f, "carbon_intensity must be >= 0, got {v}"),
            ManifestError::NegativePrice(v) => write!(f, "price_per_hour must be >= 0, got {v}"),
        }
    }
}

impl core::error::Error for ManifestError {}

impl RunManifest {
    pub fn new(model_id: impl Into<String>, dataset_id: impl Into<String>, wall_hours: f64, rates: CostRates) -> Self {
        Self {
            model_id: model_id.into(),
            n_params_millions: 0.0,
            gflops: 0.0,
            finetuned: false,
            dataset_id: dataset_id.into(),
            wall_hours,
            gpu_name: DEFAULT_GPU_NAME.into(),
            gpu_power_kw: rates.gpu_power_kw,
            price_per_hour: rates.price_per_hour,
            carbon_intensity: rates.carbon_intensity,
        }
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        if !(self.wall_hours >= 0.0) {
            return Err(ManifestError::NegativeWallHours(self.wall_hours));
        }
        if !(self.gpu_power_kw > 0.0) {
            return Err(ManifestError::NonPositivePower(self.gpu_power_kw));
        }
        if !(self.carbon_intensity >= 0.0) {
            return Err(ManifestError::NegativeCarbonIntensity(self.carbon_intensity));
        }
        if !(self.price_per_hour >= 0.0) {
            return Err(ManifestError::NegativePrice(self.price_per_hour));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub dollars: f64,
    pub kg_co2: f64,
    pub kwh: f64,
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cost=${:.2} energy={:.2} kWh co2={:.2} kg", self.dollars, self.kwh, self.kg_co2)
    }
}

/// Unrounded cost, energy and emissions of a run.
pub fn estimate_cost(manifest: &RunManifest) -> CostReport {
    let kwh = manifest.wall_hours * manifest.gpu_power_kw;
    CostReport { dollars: manifest.wall_hours * manifest.price_per_hour, kg_co2: kwh * manifest.carbon_intensity, kwh }
}

/// Footer line listing the rates behind the estimates.
pub fn cost_footer(rates: &CostRates) -> String {
    format!(
        "note: cost and CO2 use configured estimates (price {:.2}/h, {:.3} kW, {:.3} kg CO2/kWh), not measurements; \
         one hourly rate cannot match both 1.24 at 1.5 h and 2.09 at 2.61 h, so 1.5 h runs may differ by up to 0.05",
        rates.price_per_hour, rates.gpu_power_kw, rates.carbon_intensity
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mark {
    None,
    Best,
    Second,
}

impl Mark {
    fn suffix(self) -> char {
        match self {
            Mark::None => ' ',
            Mark::Best => '*',
            Mark::Second => '+',
        }
    }
}

/// Values are compared as displayed (4 decimals).
fn displayed(v: f64) -> f64 {
    libm::round(v * 1e4) / 1e4
}

/// Best and second-best marks for one column. Every row tied at a rank gets
/// that rank's mark; missing values are never marked.
pub fn rank_marks(values: &[Option<f64>], lower_is_better: bool) -> Vec<Mark> {
    let better = |a: f64, b: f64| if lower_is_better { a < b } else { a > b };
    let shown: Vec<Option<f64>> = values.iter().map(|v| v.map(displayed)).collect();
    let best = shown.iter().flatten().copied().reduce(|a, b| if better(b, a) { b } else { a });
    let second = best.and_then(|b| {
        shown.iter().flatten().copied().filter(|&v| v != b).reduce(|a, c| if better(c, a) { c } else { a })
    });
    shown
        .iter()
        .map(|v| match *v {
            Some(v) if Some(v) == best => Mark::Best,
            Some(v) if Some(v) == second => Mark::Second,
            _ => Mark::None,
        })
        .collect()
}

/// One model's manifest and its metrics per dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub manifest: RunManifest,
    pub results: Vec<(String, MetricReport)>,
}

#[derive(Debug, Clone, Copy)]
enum Metric {
    Mae,
    Iou,
    Pc,
}

impl Metric {
    const ALL: [Metric; 3] = [Metric::Mae, Metric::Iou, Metric::Pc];

    fn label(self) -> &'static str {
        match self {
            Metric::Mae => "MAE↓",
            Metric::Iou => "IoU↑",
            Metric::Pc => "PC↑",
        }
    }

    fn lower_is_better(self) -> bool {
        matches!(self, Metric::Mae)
    }

    fn value(self, r: &MetricReport) -> Option<f64> {
        match self {
            Metric::Mae => Some(r.mae),
            Metric::Iou => Some(r.iou),
            Metric::Pc => r.pearson,
        }
    }
}

fn pad(out: &mut String, s: &str, width: usize) {
    let len = s.chars().count();
    out.push_str(s);
    for _ in len..width {
        out.push(' ');
    }
}

/// Fixed-width comparison table: Model | FT | #Params | GFLOPs, then
/// MAE/IoU/PC per dataset in order of first appearance. `*` marks the best
/// value of a column and `+` the second best.
pub fn render_benchmark_table(rows: &[BenchmarkRow]) -> String {
    let mut datasets: Vec<&str> = Vec::new();
    for row in rows {
        for (d, _) in &row.results {
            if !datasets.contains(&d.as_str()) {
                datasets.push(d);
            }
        }
    }
    fn lookup<'a>(row: &'a BenchmarkRow, d: &str) -> Option<&'a MetricReport> {
        row.results.iter().find(|(name, _)| name == d).map(|(_, r)| r)
    }

    let mut header: Vec<String> = ["Model", "FT", "#Params", "GFLOPs"].iter().map(|s| String::from(*s)).collect();
    let mut cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let m = &r.manifest;
            alloc::vec![
                m.model_id.clone(),
                String::from(if m.finetuned { "yes" } else { "no" }),
                format!("{:.1}M", m.n_params_millions),
                format!("{}", m.gflops),
            ]
        })
        .collect();
    for d in &datasets {
        for metric in Metric::ALL {
            header.push(format!("{d} {}", metric.label()));
            let values: Vec<Option<f64>> =
                rows.iter().map(|r| lookup(r, d).and_then(|rep| metric.value(rep))).collect();
            let marks = rank_marks(&values, metric.lower_is_better());
            for (row_cells, (v, mark)) in cells.iter_mut().zip(values.iter().zip(marks)) {
                row_cells.push(match v {
                    Some(v) => format!("{:.4}{}", v, mark.suffix()),
                    None => String::from("-"),
                });
            }
        }
    }

    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            core::iter::once(&header[c])
                .chain(cells.iter().map(|r| &r[c]))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    let line = |out: &mut String, row: &[String]| {
        for (c, s) in row.iter().enumerate() {
            if c > 0 {
                out.push_str(" | ");
            }
            pad(out, s, widths[c]);
        }
        while out.ends_with(' ') {
            out.pop();
        }
        out.push('\n');
    };
    line(&mut out, &header);
    let rule: usize = widths.iter().sum::<usize>() + 3 * widths.len().saturating_sub(1);
    for _ in 0..rule {
        out.push('-');
    }
    out.push('\n');
    for row in &cells {
        line(&mut out, row);
    }
    let _ = writeln!(out, "* best, + second best");
    out
}
