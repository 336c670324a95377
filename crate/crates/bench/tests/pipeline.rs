use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use canopy_bench::curate::write_manifest;
use canopy_bench::json;
use canopy_bench::pipeline::{Pipeline, PipelineError, RunReport, EXIT_CONFIG, EXIT_STAGE};
use canopy_bench::scenes::{write_perturbed, write_scene};
use canopy_core::curation::{SampleRecord, Split};
use canopy_core::synth::{Crown, CrownShape, PerturbModel, SceneSpec, TerrainSpec};

fn spec(seed: u64) -> SceneSpec {
    let crowns = (0..4)
        .map(|k| Crown {
            center: (8.0 + 10.0 * k as f64, 10.0 + 6.0 * (seed % 4) as f64),
            radius: 3.0 + k as f64,
            height: 4.0 + 3.0 * k as f64 + seed as f64,
            shape: if k % 2 == 0 { CrownShape::Paraboloid } else { CrownShape::Cone },
        })
        .collect();
    SceneSpec {
        size: 48,
        pixel_size: 1.0,
        terrain: TerrainSpec { base_elevation: 300.0, relief_amplitude: 12.0, seed },
        crowns,
        noise_sigma: 0.0,
    }
}

/// Four small scenes, a scored manifest and scaled pseudo-predictions.
fn corpus(root: &Path) {
    let data = root.join("data");
    let splits = [Split::Train, Split::Train, Split::Val, Split::Test];
    let records: Vec<SampleRecord> = (1..=4u64)
        .map(|seed| {
            let id = format!("s{seed}");
            write_scene(&spec(seed), &id, &data).unwrap();
            SampleRecord::new(&id, format!("dsm/{id}.chmf"), format!("chm/{id}.chmf"), splits[seed as usize - 1])
                .with_score(1.0 + seed as f64)
        })
        .collect();
    write_manifest(&data.join("manifest.json"), &records).unwrap();
    write_perturbed(&data.join("chm"), PerturbModel::Scale, 1.25, 0, &root.join("pred")).unwrap();
}

const FULL: &str = r#"
workers = 2

[ingest]
manifest = "data/manifest.json"

[chm]
dsm_dir = "data/dsm"
dtm_dir = "data/dtm"

[curate]
quality_threshold = 2.5
subsample_size = 500

[evaluate]
pred_dir = "pred"
normalize = "none"

[report]
model_id = "scaled"
dataset_id = "tiny"
wall_hours = 2.61
"#;

fn pipeline(root: &Path, name: &str, text: &str) -> Pipeline {
    let path = root.join(name);
    fs::write(&path, text).unwrap();
    Pipeline::from_file(&path).unwrap()
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                files.push((p.strip_prefix(dir).unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

fn statuses(p: &Pipeline) -> Vec<String> {
    p.log().to_vec()
}

#[test]
fn full_run_then_rerun_skips_with_identical_outputs() {
    let root = tempfile::tempdir().unwrap();
    corpus(root.path());
    let mut first = pipeline(root.path(), "p.toml", FULL);
    first.run().unwrap();
    let ran = ["ingest", "chm", "curate", "evaluate", "report"].map(|s| format!("stage {s}: ran"));
    assert_eq!(statuses(&first), ran);
    let work = first.work_dir().to_path_buf();
    let before = snapshot(&work);

    let report: RunReport = json::read(&work.join("report/report.json")).unwrap();
    // s1 (score 2.0) is excluded; the rest evaluate with MAE = 0.25 * mean height.
    assert!(report.row.results[0].1.mae > 0.0);
    assert!((report.cost.dollars - 2.088).abs() < 1e-12);
    let curated: Vec<SampleRecord> = json::read(&work.join("curate/manifest.json")).unwrap();
    assert_eq!(curated[0].split, Split::Excluded);
    let eval: canopy_core::metrics::EvalReport = json::read(&work.join("evaluate/report.json")).unwrap();
    let ids: Vec<&str> = eval.tiles.iter().map(|t| t.key.id.as_str()).collect();
    assert_eq!(ids, ["s2", "s3", "s4"]);
    // The derived CHMs match the synthetic truth byte for byte.
    for id in ["s1", "s2", "s3", "s4"] {
        let name = format!("{id}.chmf");
        assert_eq!(
            fs::read(work.join("chm").join(&name)).unwrap(),
            fs::read(root.path().join("data/chm").join(&name)).unwrap()
        );
    }

    let mut second = pipeline(root.path(), "p.toml", FULL);
    second.run().unwrap();
    let skipped = ["ingest", "chm", "curate", "evaluate", "report"].map(|s| format!("stage {s}: skipped"));
    assert_eq!(statuses(&second), skipped);
    assert_eq!(snapshot(&work), before);
}

#[test]
fn changed_inputs_and_damaged_outputs_rerun_only_what_depends_on_them() {
    let root = tempfile::tempdir().unwrap();
    corpus(root.path());
    pipeline(root.path(), "p.toml", FULL).run().unwrap();

    let pred = root.path().join("pred/s3.chmf");
    let gt = root.path().join("data/chm/s3.chmf");
    fs::copy(&gt, &pred).unwrap();
    let mut p = pipeline(root.path(), "p.toml", FULL);
    p.run().unwrap();
    assert_eq!(
        statuses(&p),
        [
            "stage ingest: skipped",
            "stage chm: skipped",
            "stage curate: skipped",
            "stage evaluate: ran",
            "stage report: ran"
        ]
    );

    fs::write(root.path().join("work/evaluate/summary.txt"), "tampered").unwrap();
    let mut p = pipeline(root.path(), "p.toml", FULL);
    p.run().unwrap();
    assert_eq!(statuses(&p)[3], "stage evaluate: ran");
    // Same inputs, same bytes: the report stage input hash is unchanged.
    assert_eq!(statuses(&p)[4], "stage report: skipped");
}

#[test]
fn evaluate_only_config() {
    let root = tempfile::tempdir().unwrap();
    corpus(root.path());
    let mut p =
        pipeline(root.path(), "e.toml", "work_dir = \"out\"\n[evaluate]\npred_dir = \"pred\"\ngt_dir = \"data/chm\"\n");
    p.run().unwrap();
    assert_eq!(statuses(&p), ["stage evaluate: ran"]);
    assert!(root.path().join("out/evaluate/report.json").is_file());
}

#[test]
fn missing_gt_dir_is_a_stage_failure() {
    let root = tempfile::tempdir().unwrap();
    corpus(root.path());
    let mut p = pipeline(root.path(), "e.toml", "[evaluate]\npred_dir = \"pred\"\ngt_dir = \"absent\"\n");
    let err = p.run().unwrap_err();
    assert!(matches!(err, PipelineError::StageFailure { stage: "evaluate", .. }), "{err}");
    assert_eq!(err.exit_code(), EXIT_STAGE);
}

fn run_cli(root: &Path, text: &str) -> Output {
    let path = root.join("cli.toml");
    fs::write(&path, text).unwrap();
    Command::new(env!("CARGO_BIN_EXE_canopy")).arg("run").arg(&path).output().unwrap()
}

#[test]
fn cli_exit_codes() {
    let root = tempfile::tempdir().unwrap();
    corpus(root.path());
    let ok = run_cli(root.path(), "[evaluate]\npred_dir = \"pred\"\ngt_dir = \"data/chm\"\n");
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("stage evaluate: ran"));
    let again = run_cli(root.path(), "[evaluate]\npred_dir = \"pred\"\ngt_dir = \"data/chm\"\n");
    assert!(String::from_utf8_lossy(&again.stdout).contains("stage evaluate: skipped"));

    let failed = run_cli(root.path(), "[evaluate]\npred_dir = \"pred\"\ngt_dir = \"absent\"\n");
    assert_eq!(failed.status.code(), Some(EXIT_STAGE));
    assert!(String::from_utf8_lossy(&failed.stderr).contains("stage evaluate failed"));

    for bad in [
        "bogus = 1\n[evaluate]\npred_dir = \"p\"\ngt_dir = \"g\"\n",
        "",
        "[report]\nmodel_id = \"m\"\ndataset_id = \"d\"\n",
        "[evaluate]\npred_dir = \"p\"\n",
        "[evaluate]\npred_dir = \"p\"\ngt_dir = \"g\"\nnormalize = \"both\"\n",
        "[evaluate\n",
    ] {
        let out = run_cli(root.path(), bad);
        assert_eq!(out.status.code(), Some(EXIT_CONFIG), "{bad:?}");
    }
    let missing = Command::new(env!("CARGO_BIN_EXE_canopy")).args(["run", "/no/such/config.toml"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(EXIT_CONFIG));
}

#[test]
fn extra_rows_render_in_one_table() {
    let root = tempfile::tempdir().unwrap();
    corpus(root.path());
    pipeline(root.path(), "p.toml", FULL).run().unwrap();
    fs::rename(root.path().join("work"), root.path().join("first")).unwrap();
    let second =
        FULL.replace("model_id = \"scaled\"", "model_id = \"again\"\nextra_rows = [\"first/report/report.json\"]");
    let mut p = pipeline(root.path(), "p.toml", &second);
    p.run().unwrap();
    let table = fs::read_to_string(p.work_dir().join("report/report.txt")).unwrap();
    assert!(table.lines().any(|l| l.starts_with("again ")), "{table}");
    assert!(table.lines().any(|l| l.starts_with("scaled ")), "{table}");
    assert!(table.contains("not measurements"));
}
