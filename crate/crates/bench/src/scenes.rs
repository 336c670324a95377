//! Writing synthetic scenes and pseudo-predictions to disk.

use std::fs;
use std::path::{Path, PathBuf};

use canopy_core::curation::{SampleRecord, Split};
use canopy_core::synth::{self, generate_scene, perturb_prediction, PerturbModel, SceneSpec};

use crate::error::{Error, Result};
use crate::evaluate::list_rasters;
use crate::io::{read_any, write_raster};
use crate::json;

/// Corpus layout: `dsm/`, `dtm/`, `chm/` hold `<id>.chmf`; `specs/` the
/// echoed scene specs.
pub fn write_scene(spec: &SceneSpec, id: &str, out_dir: &Path) -> Result<()> {
    let scene = generate_scene(spec)?;
    for (sub, raster) in [("dsm", &scene.dsm), ("dtm", &scene.dtm), ("chm", &scene.chm_true)] {
        let dir = out_dir.join(sub);
        fs::create_dir_all(&dir).map_err(Error::io(&dir))?;
        write_raster(raster, &dir.join(format!("{id}.chmf")))?;
    }
    json::write(&out_dir.join("specs").join(format!("{id}.json")), spec)
}

pub fn desk_v1_id(seed: u64) -> String {
    format!("scene-{seed:02}")
}

/// Split of a desk-v1 scene: seeds 1-8 train, 9-10 val, 11-12 test.
pub fn desk_v1_split(seed: u64) -> Split {
    match seed {
        0..=8 => Split::Train,
        9 | 10 => Split::Val,
        _ => Split::Test,
    }
}

/// Generates the 12-scene `desk-v1` corpus plus `manifest.json`.
pub fn write_desk_v1(out_dir: &Path) -> Result<Vec<SampleRecord>> {
    let records: Vec<SampleRecord> = synth::desk_v1_specs()
        .into_iter()
        .map(|(seed, spec)| {
            let id = desk_v1_id(seed);
            write_scene(&spec, &id, out_dir)?;
            Ok(SampleRecord::new(&id, format!("dsm/{id}.chmf"), format!("chm/{id}.chmf"), desk_v1_split(seed)))
        })
        .collect::<Result<_>>()?;
    json::write(&out_dir.join("manifest.json"), &records)?;
    Ok(records)
}

/// Applies a perturbation to every raster in `gt_dir`, writing same-named
/// CHMF files to `out_dir`.
pub fn write_perturbed(
    gt_dir: &Path,
    model: PerturbModel,
    magnitude: f64,
    seed: u64,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(Error::io(out_dir))?;
    list_rasters(gt_dir)?
        .into_iter()
        .map(|gt| {
            let pred = perturb_prediction(&read_any(&gt)?, model, magnitude, seed);
            let stem = gt.file_stem().expect("listed files have names").to_string_lossy().into_owned();
            let out = out_dir.join(format!("{stem}.chmf"));
            write_raster(&pred, &out)?;
            Ok(out)
        })
        .collect()
}
