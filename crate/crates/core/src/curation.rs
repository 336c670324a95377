//! Dataset curation: quality-score filtering, empty-canopy filtering and
//! two-sample Kolmogorov-Smirnov comparison of split height distributions.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::raster::Raster;
use crate::rng::SplitMix64;

/// Quality threshold used for the NEON imagery; scores strictly below it are dropped.
pub const DEFAULT_QUALITY_THRESHOLD: f64 = 2.5;
/// Pixels drawn per split for per-pixel KS comparisons.
pub const DEFAULT_SUBSAMPLE_SIZE: usize = 100_000;
pub const MAX_QUALITY_SCORE: f64 = 5.0;

/// Terms smaller than this end the Kolmogorov series.
const SERIES_EPS: f64 = 1e-10;
const SERIES_MAX_TERMS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
    Excluded,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Excluded => "excluded",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    None,
    LowQuality,
    EmptyCanopy,
}

/// One image/CHM sample in a dataset manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub image_path: String,
    pub chm_path: String,
    #[serde(default)]
    pub quality_score: Option<f64>,
    pub split: Split,
    #[serde(default = "no_reason")]
    pub exclusion_reason: ExclusionReason,
}

fn no_reason() -> ExclusionReason {
    ExclusionReason::None
}

impl SampleRecord {
    pub fn new(
        id: impl Into<String>,
        image_path: impl Into<String>,
        chm_path: impl Into<String>,
        split: Split,
    ) -> Self {
        Self {
            id: id.into(),
            image_path: image_path.into(),
            chm_path: chm_path.into(),
            quality_score: None,
            split,
            exclusion_reason: ExclusionReason::None,
        }
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.quality_score = Some(score);
        self
    }

    pub fn is_excluded(&self) -> bool {
        self.split == Split::Excluded
    }

    pub fn exclude(&mut self, reason: ExclusionReason) {
        self.split = Split::Excluded;
        self.exclusion_reason = reason;
    }

    pub fn validate(&self) -> Result<(), CurationError> {
        if let Some(score) = self.quality_score {
            if !(0.0..=MAX_QUALITY_SCORE).contains(&score) {
                return Err(CurationError::ScoreOutOfRange { id: self.id.clone(), score });
            }
        }
        if (self.split == Split::Excluded) != (self.exclusion_reason != ExclusionReason::None) {
            return Err(CurationError::InconsistentExclusion { id: self.id.clone() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CurationError {
    MissingScore { id: String },
    ScoreOutOfRange { id: String, score: f64 },
    InconsistentExclusion { id: String },
    EmptySample,
    NonFiniteSample,
    EmptySplit(Split),
}

impl fmt::Display for CurationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CurationError::MissingScore { id } => write!(f, "record {id} has no quality score"),
            CurationError::ScoreOutOfRange { id, score } => {
                write!(f, "record {id} has quality score {score} outside [0, {MAX_QUALITY_SCORE}]")
            }
            CurationError::InconsistentExclusion { id } => {
                write!(f, "record {id}: split must be excluded exactly when an exclusion reason is set")
            }
            CurationError::EmptySample => f.write_str("KS test needs at least one value per sample"),
            CurationError::NonFiniteSample => f.write_str("KS test samples must be finite"),
            CurationError::EmptySplit(s) => write!(f, "split {} has no usable samples", s.as_str()),
        }
    }
}

impl core::error::Error for CurationError {}

/// Error raised while loading a record's CHM, tagged with the record id.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadError<E> {
    pub id: String,
    pub source: E,
}

impl<E: fmt::Display> fmt::Display for LoadError<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "record {}: {}", self.id, self.source)
    }
}

impl<E: fmt::Debug + fmt::Display> core::error::Error for LoadError<E> {}

/// Marks records scoring strictly below `threshold` as excluded for low
/// quality. Order and length are preserved; records already excluded keep
/// their original reason.
pub fn filter_by_quality(mut records: Vec<SampleRecord>, threshold: f64) -> Result<Vec<SampleRecord>, CurationError> {
    for r in &records {
        r.validate()?;
        if r.quality_score.is_none() {
            return Err(CurationError::MissingScore { id: r.id.clone() });
        }
    }
    for r in records.iter_mut().filter(|r| !r.is_excluded()) {
        if r.quality_score.is_some_and(|s| s < threshold) {
            r.exclude(ExclusionReason::LowQuality);
        }
    }
    Ok(records)
}

/// True when at least one valid pixel is strictly positive.
pub fn has_canopy(chm: &Raster) -> bool {
    chm.valid_values().any(|v| v > 0.0)
}

/// Excludes records whose CHM has no positive valid pixel. Records already
/// excluded are not loaded.
pub fn filter_empty_canopy<E>(
    mut records: Vec<SampleRecord>,
    mut load: impl FnMut(&SampleRecord) -> Result<Raster, E>,
) -> Result<Vec<SampleRecord>, LoadError<E>> {
    for r in records.iter_mut().filter(|r| !r.is_excluded()) {
        let chm = load(r).map_err(|source| LoadError { id: r.id.clone(), source })?;
        if !has_canopy(&chm) {
            r.exclude(ExclusionReason::EmptyCanopy);
        }
    }
    Ok(records)
}

/// Outcome of a two-sample KS test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    /// Supremum distance between the empirical CDFs.
    pub statistic: f64,
    pub p_value: f64,
    pub n1: usize,
    pub n2: usize,
}

fn sorted(sample: &[f64]) -> Vec<f64> {
    let mut v = sample.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    v
}

/// Exact KS distance by a merged sweep over both sorted samples. All copies
/// of a tied value are consumed before the gap is measured.
pub fn ks_statistic(sample_a: &[f64], sample_b: &[f64]) -> f64 {
    let (a, b) = (sorted(sample_a), sorted(sample_b));
    let (n1, n2) = (a.len() as u128, b.len() as u128);
    let (mut i, mut j) = (0usize, 0usize);
    // Gap is |i/n1 - j/n2|, tracked as the integer numerator over n1*n2.
    let mut best: u128 = 0;
    while i < a.len() && j < b.len() {
        let x = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < a.len() && a[i] == x {
            i += 1;
        }
        while j < b.len() && b[j] == x {
            j += 1;
        }
        let gap = (i as u128 * n2).abs_diff(j as u128 * n1);
        best = best.max(gap);
    }
    best as f64 / (n1 * n2) as f64
}

/// Kolmogorov survival function `2 * sum_{k>=1} (-1)^(k-1) exp(-2 k^2 lambda^2)`,
/// truncated at the first term below 1e-10 and clamped to [0, 1].
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let a = -2.0 * lambda * lambda;
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=SERIES_MAX_TERMS {
        let k = k as f64;
        let term = 2.0 * sign * libm::exp(a * k * k);
        sum += term;
        if libm::fabs(term) < SERIES_EPS {
            break;
        }
        sign = -sign;
    }
    sum.clamp(0.0, 1.0)
}

/// Asymptotic p-value for distance `d` with the small-sample lambda correction.
pub fn ks_p_value(d: f64, n1: usize, n2: usize) -> f64 {
    let ne = (n1 as f64 * n2 as f64) / (n1 + n2) as f64;
    let root = libm::sqrt(ne);
    kolmogorov_survival((root + 0.12 + 0.11 / root) * d)
}

pub fn ks_two_sample(sample_a: &[f64], sample_b: &[f64]) -> Result<KsResult, CurationError> {
    if sample_a.is_empty() || sample_b.is_empty() {
        return Err(CurationError::EmptySample);
    }
    if sample_a.iter().chain(sample_b).any(|v| !v.is_finite()) {
        return Err(CurationError::NonFiniteSample);
    }
    let statistic = ks_statistic(sample_a, sample_b);
    Ok(KsResult {
        statistic,
        p_value: ks_p_value(statistic, sample_a.len(), sample_b.len()),
        n1: sample_a.len(),
        n2: sample_b.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeightSource {
    /// Seeded reservoir subsample of valid pixels per split.
    PerPixelSubsample,
    /// Maximum valid height of each sample.
    PerSampleMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSampling {
    pub source: HeightSource,
    pub subsample_size: usize,
    pub seed: u64,
}

impl Default for SplitSampling {
    fn default() -> Self {
        Self { source: HeightSource::PerPixelSubsample, subsample_size: DEFAULT_SUBSAMPLE_SIZE, seed: 0 }
    }
}

/// Algorithm R reservoir over a stream of heights.
#[derive(Debug, Clone)]
pub struct Reservoir {
    capacity: usize,
    seen: u64,
    rng: SplitMix64,
    items: Vec<f64>,
}

impl Reservoir {
    pub fn new(capacity: usize, seed: u64) -> Self {
        Self { capacity, seen: 0, rng: SplitMix64::new(seed), items: Vec::new() }
    }

    pub fn push(&mut self, x: f64) {
        if self.items.len() < self.capacity {
            self.items.push(x);
        } else if self.capacity > 0 {
            let j = self.rng.below(self.seen + 1);
            if (j as usize) < self.capacity {
                self.items[j as usize] = x;
            }
        }
        self.seen += 1;
    }

    pub fn into_items(self) -> Vec<f64> {
        self.items
    }
}

/// Collects the height population of one split in manifest order.
pub fn split_heights<E>(
    manifest: &[SampleRecord],
    split: Split,
    sampling: &SplitSampling,
    load: &mut impl FnMut(&SampleRecord) -> Result<Raster, E>,
) -> Result<Vec<f64>, LoadError<E>> {
    let mut reservoir = Reservoir::new(sampling.subsample_size, sampling.seed);
    let mut maxima = Vec::new();
    for r in manifest.iter().filter(|r| r.split == split) {
        let chm = load(r).map_err(|source| LoadError { id: r.id.clone(), source })?;
        match sampling.source {
            HeightSource::PerPixelSubsample => chm.valid_values().for_each(|v| reservoir.push(f64::from(v))),
            HeightSource::PerSampleMax => {
                if let Some(m) = chm.valid_values().reduce(f32::max) {
                    maxima.push(f64::from(m));
                }
            }
        }
    }
    Ok(match sampling.source {
        HeightSource::PerPixelSubsample => reservoir.into_items(),
        HeightSource::PerSampleMax => maxima,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum SplitReportError<E> {
    Load(LoadError<E>),
    Curation(CurationError),
}

impl<E: fmt::Display> fmt::Display for SplitReportError<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitReportError::Load(e) => e.fmt(f),
            SplitReportError::Curation(e) => e.fmt(f),
        }
    }
}

impl<E: fmt::Debug + fmt::Display> core::error::Error for SplitReportError<E> {}

/// A labelled KS comparison between two splits, e.g. `train-val`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitComparison {
    pub pair: String,
    #[serde(flatten)]
    pub result: KsResult,
}

impl fmt::Display for SplitComparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "pair={} D={:.6} p={:.6} n1={} n2={}",
            self.pair, self.result.statistic, self.result.p_value, self.result.n1, self.result.n2
        )
    }
}

/// KS comparisons of train against val and train against test. Every split
/// uses the same seed so identical populations give identical subsamples.
pub fn split_distribution_report<E>(
    manifest: &[SampleRecord],
    sampling: &SplitSampling,
    mut load: impl FnMut(&SampleRecord) -> Result<Raster, E>,
) -> Result<Vec<SplitComparison>, SplitReportError<E>> {
    let mut heights = |split| -> Result<Vec<f64>, SplitReportError<E>> {
        let h = split_heights(manifest, split, sampling, &mut load).map_err(SplitReportError::Load)?;
        if h.is_empty() {
            return Err(SplitReportError::Curation(CurationError::EmptySplit(split)));
        }
        Ok(h)
    };
    let train = heights(Split::Train)?;
    let val = heights(Split::Val)?;
    let test = heights(Split::Test)?;
    [("train-val", &val), ("train-test", &test)]
        .into_iter()
        .map(|(pair, other)| {
            Ok(SplitComparison {
                pair: pair.into(),
                result: ks_two_sample(&train, other).map_err(SplitReportError::Curation)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Units;
    use alloc::collections::BTreeMap;
    use alloc::format;
    use alloc::vec;
    use proptest::prelude::*;

    fn scored(id: &str, score: f64) -> SampleRecord {
        SampleRecord::new(id, format!("{id}.png"), format!("{id}.chmf"), Split::Train).with_score(score)
    }

    #[test]
    fn quality_fixture_scores() {
        let records = vec![scored("noisy", 1.10), scored("medium", 2.53), scored("good", 3.71)];
        let out = filter_by_quality(records, 2.5).unwrap();
        let excluded: Vec<_> = out.iter().filter(|r| r.is_excluded()).map(|r| r.id.as_str()).collect();
        assert_eq!(excluded, ["noisy"]);
        assert_eq!(out[0].exclusion_reason, ExclusionReason::LowQuality);
        assert_eq!(out[1].split, Split::Train);
        assert_eq!(out[2].split, Split::Train);
    }

    #[test]
    fn threshold_is_strict_and_zero_keeps_all() {
        let out = filter_by_quality(vec![scored("edge", 2.5), scored("zero", 0.0)], 2.5).unwrap();
        assert!(!out[0].is_excluded());
        assert!(out[1].is_excluded());
        let out = filter_by_quality(vec![scored("a", 0.0), scored("b", 4.9)], 0.0).unwrap();
        assert!(out.iter().all(|r| !r.is_excluded()));
    }

    #[test]
    fn quality_errors() {
        let unscored = SampleRecord::new("u", "u.png", "u.chmf", Split::Val);
        assert_eq!(
            filter_by_quality(vec![scored("a", 3.0), unscored], 2.5),
            Err(CurationError::MissingScore { id: "u".into() })
        );
        assert!(matches!(filter_by_quality(vec![scored("x", 5.5)], 2.5), Err(CurationError::ScoreOutOfRange { .. })));
        let mut bad = scored("b", 3.0);
        bad.split = Split::Excluded;
        assert_eq!(bad.validate(), Err(CurationError::InconsistentExclusion { id: "b".into() }));
    }

    proptest! {
        #[test]
        fn quality_exclusion_matches_set_oracle(
            scores in proptest::collection::vec(0.0f64..=5.0, 0..60),
            threshold in 0.0f64..5.0,
        ) {
            let records: Vec<_> = scores.iter().enumerate().map(|(i, &s)| scored(&format!("r{i}"), s)).collect();
            let out = filter_by_quality(records.clone(), threshold).unwrap();
            prop_assert_eq!(out.len(), records.len());
            for (i, (before, after)) in records.iter().zip(&out).enumerate() {
                prop_assert_eq!(&before.id, &after.id);
                prop_assert_eq!(after.is_excluded(), scores[i] < threshold);
            }
        }
    }

    fn chm(values: Vec<f32>) -> Raster {
        Raster::from_values(values.len() as u32, 1, Units::Meters, values).unwrap()
    }

    #[test]
    fn empty_canopy_filter() {
        let store: BTreeMap<&str, Raster> = [
            ("flat", chm(vec![0.0; 4])),
            ("one", chm(vec![0.0, 0.0, 0.5, 0.0])),
            ("holes", chm(vec![f32::NAN, 0.0, f32::NAN, 0.0])),
        ]
        .into_iter()
        .collect();
        let records = ["flat", "one", "holes"].map(|id| SampleRecord::new(id, "", "", Split::Test)).to_vec();
        let out = filter_empty_canopy(records, |r| Ok::<_, ()>(store[r.id.as_str()].clone())).unwrap();
        assert_eq!(out[0].exclusion_reason, ExclusionReason::EmptyCanopy);
        assert!(!out[1].is_excluded());
        assert!(out[2].is_excluded());
    }

    #[test]
    fn empty_canopy_load_error_carries_id() {
        let records = vec![SampleRecord::new("broken", "", "", Split::Train)];
        let err = filter_empty_canopy(records, |_| Err::<Raster, _>("unreadable")).unwrap_err();
        assert_eq!(err.id, "broken");
        assert_eq!(format!("{err}"), "record broken: unreadable");
    }

    proptest! {
        #[test]
        fn canopy_decision_matches_any_positive(values in proptest::collection::vec(prop_oneof![Just(f32::NAN), Just(0.0f32), -5.0f32..5.0], 1..50)) {
            let expected = values.iter().any(|v| !v.is_nan() && *v > 0.0);
            prop_assert_eq!(has_canopy(&chm(values)), expected);
        }
    }

    #[test]
    fn ks_identical_and_disjoint() {
        let a = [1.0, 2.0, 2.0, 3.5];
        let r = ks_two_sample(&a, &a).unwrap();
        assert_eq!((r.statistic, r.p_value), (0.0, 1.0));
        let r = ks_two_sample(&[0.0; 4], &[1.0; 4]).unwrap();
        assert_eq!(r.statistic, 1.0);
        assert_eq!((r.n1, r.n2), (4, 4));
    }

    #[test]
    fn ks_errors() {
        assert_eq!(ks_two_sample(&[], &[1.0]), Err(CurationError::EmptySample));
        assert_eq!(ks_two_sample(&[f64::NAN], &[1.0]), Err(CurationError::NonFiniteSample));
    }

    #[test]
    fn ks_ties_are_consumed_before_measuring() {
        // Per-value gaps: at 0 -> |3/4 - 1/4|, at 1 -> |1 - 1/2|.
        let d = ks_statistic(&[0.0, 0.0, 0.0, 1.0], &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(d, 0.5);
    }

    #[test]
    fn kolmogorov_table_values() {
        // Classical asymptotic critical values: Q(1.2238) = 0.10, Q(1.3581) = 0.05, Q(1.6276) = 0.01.
        for (lambda, alpha) in [(1.2238, 0.10), (1.3581, 0.05), (1.6276, 0.01)] {
            assert!((kolmogorov_survival(lambda) - alpha).abs() < 1e-4, "lambda {lambda}");
        }
        assert_eq!(kolmogorov_survival(0.0), 1.0);
        assert!(kolmogorov_survival(0.05) > 0.999_999);
    }

    fn reservoir_heights(values: &[f32], capacity: usize, seed: u64) -> Vec<f64> {
        let mut r = Reservoir::new(capacity, seed);
        values.iter().for_each(|&v| r.push(f64::from(v)));
        r.into_items()
    }

    #[test]
    fn reservoir_keeps_everything_when_small() {
        assert_eq!(reservoir_heights(&[1.0, 2.0, 3.0], 10, 5), vec![1.0, 2.0, 3.0]);
        assert_eq!(reservoir_heights(&[1.0, 2.0, 3.0, 4.0], 2, 5).len(), 2);
        assert_eq!(reservoir_heights(&[1.0; 5], 2, 5), reservoir_heights(&[1.0; 5], 2, 5));
    }

    fn split_store() -> (Vec<SampleRecord>, BTreeMap<String, Raster>) {
        let mut records = Vec::new();
        let mut store = BTreeMap::new();
        let mut rng = SplitMix64::new(3);
        for (i, split) in [Split::Train, Split::Train, Split::Val, Split::Test, Split::Test].into_iter().enumerate() {
            let id = format!("s{i}");
            let values = (0..64).map(|_| (rng.next_f64() * 30.0) as f32).collect();
            store.insert(id.clone(), Raster::from_values(8, 8, Units::Meters, values).unwrap());
            records.push(SampleRecord::new(id, "", "", split));
        }
        (records, store)
    }

    #[test]
    fn split_report_matches_direct_ks() {
        let (records, store) = split_store();
        for source in [HeightSource::PerPixelSubsample, HeightSource::PerSampleMax] {
            let sampling = SplitSampling { source, subsample_size: 50, seed: 11 };
            let mut load = |r: &SampleRecord| Ok::<_, ()>(store[&r.id].clone());
            let report = split_distribution_report(&records, &sampling, &mut load).unwrap();
            assert_eq!(report.len(), 2);
            let train = split_heights(&records, Split::Train, &sampling, &mut load).unwrap();
            let test = split_heights(&records, Split::Test, &sampling, &mut load).unwrap();
            assert_eq!(report[1].pair, "train-test");
            assert_eq!(report[1].result, ks_two_sample(&train, &test).unwrap());
        }
    }

    #[test]
    fn duplicated_split_reports_zero_distance() {
        let (mut records, store) = split_store();
        let dup: Vec<_> = records
            .iter()
            .filter(|r| r.split == Split::Train)
            .flat_map(|r| {
                let mut v = r.clone();
                v.split = Split::Val;
                let mut t = r.clone();
                t.split = Split::Test;
                [v, t]
            })
            .collect();
        records.retain(|r| r.split == Split::Train);
        records.extend(dup);
        let sampling = SplitSampling { subsample_size: 40, ..SplitSampling::default() };
        let report = split_distribution_report(&records, &sampling, |r| Ok::<_, ()>(store[&r.id].clone())).unwrap();
        for c in &report {
            assert_eq!((c.result.statistic, c.result.p_value), (0.0, 1.0));
        }
        assert_eq!(format!("{}", report[0]), "pair=train-val D=0.000000 p=1.000000 n1=40 n2=40");
    }

    #[test]
    fn disjoint_splits_report_full_distance() {
        let records = vec![
            SampleRecord::new("a", "", "", Split::Train),
            SampleRecord::new("b", "", "", Split::Val),
            SampleRecord::new("c", "", "", Split::Test),
        ];
        let load = |r: &SampleRecord| {
            let h = if r.id == "c" { 30.0 } else { 5.0 };
            Ok::<_, ()>(chm(vec![h; 400]))
        };
        let report = split_distribution_report(&records, &SplitSampling::default(), load).unwrap();
        assert_eq!(report[1].result.statistic, 1.0);
        assert!(report[1].result.p_value < 1e-100);
        assert_eq!(report[0].result.statistic, 0.0);
    }

    #[test]
    fn empty_split_is_an_error() {
        let records = vec![SampleRecord::new("a", "", "", Split::Train), SampleRecord::new("b", "", "", Split::Val)];
        let err = split_distribution_report(&records, &SplitSampling::default(), |_| Ok::<_, ()>(chm(vec![1.0])))
            .unwrap_err();
        assert_eq!(err, SplitReportError::Curation(CurationError::EmptySplit(Split::Test)));
    }
}
