use std::path::Path;
use std::process::Command;

use canopy_bench::chmf;
use canopy_bench::curate::{curate, read_manifest, run_score_cmd, write_manifest, CurateOptions, KsReport};
use canopy_bench::{json, Error};
use canopy_core::curation::{ExclusionReason, SampleRecord, Split, SplitSampling};
use canopy_core::raster::{Raster, Units};
use canopy_core::SplitMix64;

fn chm(dir: &Path, id: &str, values: Vec<f32>) {
    let n = values.len() as u32;
    let r = Raster::from_values(n, 1, Units::Meters, values).unwrap();
    chmf::write(&r, &dir.join("chm").join(format!("{id}.chmf"))).unwrap();
}

fn record(id: &str, split: Split) -> SampleRecord {
    SampleRecord::new(id, format!("img/{id}.png"), format!("chm/{id}.chmf"), split)
}

/// Three scored samples around the threshold plus two canopy edge cases.
fn fixture(dir: &Path) -> Vec<SampleRecord> {
    for id in ["q110", "q253", "q371"] {
        chm(dir, id, vec![0.0, 2.0, 7.5, f32::NAN]);
    }
    chm(dir, "bare", vec![0.0; 16]);
    let mut one = vec![0.0; 16];
    one[9] = 0.5;
    chm(dir, "one_px", one);
    vec![
        record("q110", Split::Train).with_score(1.10),
        record("q253", Split::Train).with_score(2.53),
        record("q371", Split::Val).with_score(3.71),
        record("bare", Split::Train).with_score(4.0),
        record("one_px", Split::Test).with_score(4.0),
    ]
}

fn opts(dir: &Path) -> CurateOptions {
    CurateOptions { base_dir: dir.to_path_buf(), ..CurateOptions::default() }
}

#[test]
fn quality_and_empty_canopy_filters_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let records = fixture(dir.path());
    let out = curate(records, &opts(dir.path())).unwrap();
    let reasons: Vec<(&str, ExclusionReason)> =
        out.records.iter().map(|r| (r.id.as_str(), r.exclusion_reason)).collect();
    assert_eq!(
        reasons,
        [
            ("q110", ExclusionReason::LowQuality),
            ("q253", ExclusionReason::None),
            ("q371", ExclusionReason::None),
            ("bare", ExclusionReason::EmptyCanopy),
            ("one_px", ExclusionReason::None),
        ]
    );
    assert_eq!(out.records[0].split, Split::Excluded);
    assert_eq!(out.records[4].split, Split::Test);
    assert!(out.ks.is_none());
}

#[test]
fn manifest_json_round_trip_keeps_field_names() {
    let dir = tempfile::tempdir().unwrap();
    let records = fixture(dir.path());
    let path = dir.path().join("m.json");
    write_manifest(&path, &records).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    for field in ["\"id\"", "\"image_path\"", "\"chm_path\"", "\"quality_score\"", "\"split\"", "\"exclusion_reason\""]
    {
        assert!(text.contains(field), "{field}");
    }
    assert_eq!(read_manifest(&path).unwrap(), records);
}

#[test]
fn invalid_manifests_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    std::fs::write(
        &path,
        r#"[{"id":"a","image_path":"a","chm_path":"a","quality_score":7.0,"split":"train","exclusion_reason":"none"}]"#,
    )
    .unwrap();
    assert!(read_manifest(&path).is_err());
    std::fs::write(&path, "{not json").unwrap();
    assert!(matches!(read_manifest(&path), Err(Error::Json { .. })));
}

#[test]
fn missing_scores_need_a_scorer() {
    let dir = tempfile::tempdir().unwrap();
    let mut records = fixture(dir.path());
    records[1].quality_score = None;
    assert!(curate(records.clone(), &opts(dir.path())).is_err());

    let scored = curate(records, &CurateOptions { score_cmd: Some("echo 1.0".into()), ..opts(dir.path()) }).unwrap();
    assert_eq!(scored.records[1].quality_score, Some(1.0));
    assert_eq!(scored.records[1].exclusion_reason, ExclusionReason::LowQuality);
    // Records that already carry a score are left alone.
    assert_eq!(scored.records[2].quality_score, Some(3.71));
}

#[test]
fn score_command_sees_the_image_path() {
    let dir = tempfile::tempdir().unwrap();
    let image = dir.path().join("it's here.png");
    let score_file = dir.path().join("score.txt");
    std::fs::write(&score_file, "3.25 extra words\n").unwrap();
    let cmd = format!("test -n {{image}} && test \"$CANOPY_IMAGE\" = {{image}} && cat '{}'", score_file.display());
    assert_eq!(run_score_cmd(&cmd, &image).unwrap(), 3.25);
    assert!(matches!(run_score_cmd("echo 9", &image), Err(Error::ScoreCommand { .. })));
    assert!(matches!(run_score_cmd("echo nope", &image), Err(Error::ScoreCommand { .. })));
    assert!(matches!(run_score_cmd("exit 1", &image), Err(Error::ScoreCommand { .. })));
}

#[test]
fn unreadable_chm_names_the_record() {
    let dir = tempfile::tempdir().unwrap();
    let mut records = fixture(dir.path());
    records.push(record("ghost", Split::Train).with_score(4.0));
    let err = curate(records, &opts(dir.path())).unwrap_err();
    assert!(matches!(&err, Error::Record { id, .. } if id == "ghost"), "{err}");
}

fn split_corpus(dir: &Path) -> Vec<SampleRecord> {
    let mut rng = SplitMix64::new(5);
    let mut records = Vec::new();
    for (i, split) in
        [Split::Train, Split::Train, Split::Train, Split::Val, Split::Test, Split::Test].into_iter().enumerate()
    {
        let id = format!("s{i}");
        let values = (0..400).map(|_| (rng.next_f64() * 30.0) as f32 + 0.5).collect();
        chm(dir, &id, values);
        records.push(record(&id, split).with_score(4.0));
    }
    records
}

#[test]
fn ks_report_is_reproducible_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let records = split_corpus(dir.path());
    let sampling = SplitSampling { subsample_size: 500, seed: 9, ..SplitSampling::default() };
    let run = |workers| {
        let o = CurateOptions { ks_report: true, sampling, workers, ..opts(dir.path()) };
        curate(records.clone(), &o).unwrap().ks.unwrap()
    };
    let one: KsReport = run(1);
    assert_eq!(one, run(4));
    let pairs: Vec<&str> = one.comparisons.iter().map(|c| c.pair.as_str()).collect();
    assert_eq!(pairs, ["train-val", "train-test"]);
    assert_eq!(one.comparisons[0].result.n1, 500);
    assert_eq!(one.comparisons[0].result.n2, 400);
}

#[test]
fn cli_curate_writes_manifest_and_ks_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut records = split_corpus(dir.path());
    records.extend(fixture(dir.path()));
    let manifest = dir.path().join("in.json");
    write_manifest(&manifest, &records).unwrap();
    let out = dir.path().join("out").join("curated.json");
    let output = Command::new(env!("CARGO_BIN_EXE_canopy"))
        .args(["curate", "--manifest"])
        .arg(&manifest)
        .args(["--quality-threshold", "2.5", "--ks-report", "--seed", "3", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.contains("kept=9 low_quality=1 empty_canopy=1"), "{stdout}");
    let ks_lines: Vec<&str> = stdout.lines().filter(|l| l.starts_with("pair=")).collect();
    assert_eq!(ks_lines.len(), 2);
    assert!(ks_lines[0].starts_with("pair=train-val D="), "{}", ks_lines[0]);
    assert!(ks_lines[1].contains(" n1=") && ks_lines[1].contains(" n2="));

    let curated = read_manifest(&out).unwrap();
    assert_eq!(curated.len(), records.len());
    // Written elsewhere, so paths were made absolute and still resolve.
    assert!(curated.iter().all(|r| Path::new(&r.chm_path).is_absolute()));
    let ks: KsReport = json::read(&dir.path().join("out").join("curated.json.ks.json")).unwrap();
    assert_eq!(ks.sampling.seed, 3);
}
