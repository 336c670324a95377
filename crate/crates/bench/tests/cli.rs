use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use canopy_bench::{chmf, json};
use canopy_core::raster::{Raster, Units};
use canopy_core::synth::{Crown, CrownShape, SceneSpec, TerrainSpec};

fn canopy(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_canopy")).args(args).current_dir(cwd).output().unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn chm_derive_reports_anomalies() {
    let dir = tempfile::tempdir().unwrap();
    let dsm = Raster::from_values(4, 1, Units::Meters, vec![100.0, 99.0, 250.0, f32::NAN]).unwrap();
    let dtm = Raster::from_values(4, 1, Units::Meters, vec![90.0, 100.0, 100.0, 100.0]).unwrap();
    chmf::write(&dsm, &dir.path().join("dsm.chmf")).unwrap();
    chmf::write(&dtm, &dir.path().join("dtm.chmf")).unwrap();

    let out =
        stdout(&canopy(&["chm", "derive", "--dsm", "dsm.chmf", "--dtm", "dtm.chmf", "--out", "chm.chmf"], dir.path()));
    assert_eq!(out, "anomaly=too_tall count=1\nanomaly=clamped count=1\n");
    let chm = chmf::read(&dir.path().join("chm.chmf")).unwrap();
    assert_eq!(&chm.values()[..3], &[10.0, 0.0, 150.0]);
    assert!(chm.values()[3].is_nan());

    let out = stdout(&canopy(
        &[
            "chm",
            "derive",
            "--dsm",
            "dsm.chmf",
            "--dtm",
            "dtm.chmf",
            "--out",
            "raw.chmf",
            "--no-clamp",
            "--max-height",
            "200",
        ],
        dir.path(),
    ));
    assert_eq!(out, "anomaly=negative count=1\n");

    let missing = canopy(&["chm", "derive", "--dsm", "nope.chmf", "--dtm", "dtm.chmf", "--out", "x.chmf"], dir.path());
    assert_eq!(missing.status.code(), Some(3));
}

#[test]
fn synth_from_spec_echoes_the_spec() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SceneSpec {
        size: 32,
        pixel_size: 0.5,
        terrain: TerrainSpec { base_elevation: 80.0, relief_amplitude: 5.0, seed: 3 },
        crowns: vec![Crown { center: (16.0, 16.0), radius: 6.0, height: 12.0, shape: CrownShape::Cone }],
        noise_sigma: 0.0,
    };
    json::write(&dir.path().join("plot.json"), &spec).unwrap();
    stdout(&canopy(&["synth", "--spec", "plot.json", "--out-dir", "scene"], dir.path()));
    for sub in ["dsm", "dtm", "chm"] {
        assert!(dir.path().join(format!("scene/{sub}/plot.chmf")).is_file(), "{sub}");
    }
    let echoed: SceneSpec = json::read(&dir.path().join("scene/specs/plot.json")).unwrap();
    assert_eq!(echoed, spec);
    let chm = chmf::read(&dir.path().join("scene/chm/plot.chmf")).unwrap();
    assert_eq!(chm.get(16, 16), Some(12.0));

    let neither = canopy(&["synth", "--out-dir", "x"], dir.path());
    assert_eq!(neither.status.code(), Some(2));
}

#[test]
fn synth_perturb_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    stdout(&canopy(&["synth", "--desk-v1", "--out-dir", "desk"], dir.path()));
    assert_eq!(fs::read_dir(dir.path().join("desk/chm")).unwrap().count(), 12);
    stdout(&canopy(
        &["perturb", "--gt-dir", "desk/chm", "--model", "dropout-small-trees", "--magnitude", "0", "--out-dir", "same"],
        dir.path(),
    ));
    let out = stdout(&canopy(
        &[
            "evaluate",
            "--pred-dir",
            "same",
            "--gt-dir",
            "desk/chm",
            "--manifest",
            "desk/manifest.json",
            "--split",
            "val",
            "--report",
            "r.json",
        ],
        dir.path(),
    ));
    let values = out.lines().nth(1).unwrap();
    assert_eq!(values.split_whitespace().collect::<Vec<_>>(), ["0.0000", "1.0000", "1.0000"]);
}

#[test]
fn cost_and_convert() {
    let dir = tempfile::tempdir().unwrap();
    let out = stdout(&canopy(&["cost", "--hours", "2.61"], dir.path()));
    assert!(out.starts_with("cost=$2.09 "), "{out}");
    assert!(out.contains("co2=0.24 kg"), "{out}");
    let out =
        stdout(&canopy(&["cost", "--hours", "1.5", "--price", "2", "--power", "1", "--intensity", "0.5"], dir.path()));
    assert!(out.starts_with("cost=$3.00 energy=1.50 kWh co2=0.75 kg"), "{out}");
    assert_eq!(canopy(&["cost", "--hours", "-1"], dir.path()).status.code(), Some(2));

    let r = Raster::from_values(2, 1, Units::Relative, vec![0.25, f32::NAN]).unwrap();
    chmf::write(&r, &dir.path().join("a.chmf")).unwrap();
    stdout(&canopy(&["convert", "--in", "a.chmf", "--out", "b.chmf"], dir.path()));
    assert_eq!(fs::read(dir.path().join("a.chmf")).unwrap(), fs::read(dir.path().join("b.chmf")).unwrap());
}
