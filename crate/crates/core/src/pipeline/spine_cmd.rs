//! Single-exam vertebra characterisation over one or more subjects.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::SpineParams;
use super::exam::{Exam, InputRecord};
use super::{write_json, Outcome, Skipped, TOOL_VERSION};
use crate::error::{Error, Result};
use crate::mesh::{channel, mesh_centroid, save_colored_mesh, Colormap, TriangleMesh};
use crate::spine::{
    centroid_distances, estimate_density, flag_outliers, flagged_vertebrae, segment_vertebra, vertebra_records,
    vertebra_thresholds, Bandwidth, DensityCurve, RegionThresholds, TissueRecord,
};
use crate::texture::{map_grey_levels, CriterionKind, MappingCriterion};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CentroidSource {
    Annotation,
    /// Area-weighted centroid of the whole vertebra surface.
    SurfaceFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertebraReport {
    pub subject: String,
    pub vertebra_id: i32,
    pub name: String,
    pub mesh: String,
    pub centroid: [f64; 3],
    pub centroid_source: CentroidSource,
    pub thresholds: RegionThresholds,
    /// Fraction of vertices in body, arch and process regions.
    pub region_fractions: [f64; 3],
    pub density: DensityCurve,
}

/// `spine_report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpineReport {
    pub tool_version: String,
    pub inputs: Vec<InputRecord>,
    pub params: SpineParams,
    pub vertebrae: Vec<VertebraReport>,
    pub records: Vec<TissueRecord>,
    /// `(subject, vertebra_id)` of vertebrae with a flagged record.
    pub outliers: Vec<(String, i32)>,
    pub skipped: Vec<SkippedVertebra>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedVertebra {
    pub subject: String,
    #[serde(flatten)]
    pub inner: Skipped,
}

/// Bundle provenance, `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpineManifest {
    pub kind: String,
    pub tool_version: String,
    pub inputs: Vec<InputRecord>,
    pub params: SpineParams,
    pub meshes: Vec<String>,
}

struct VertebraResult {
    report: VertebraReport,
    records: Vec<TissueRecord>,
    mesh: TriangleMesh,
}

fn subject_name(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "subject".into())
}

fn process_vertebra(exam: &Exam, subject: &str, id: i32, params: &SpineParams) -> Result<VertebraResult> {
    let mut mesh = exam.mesh(id)?;
    let (centroid, centroid_source) = match exam.centroids.as_ref().and_then(|c| c.get(&id)) {
        Some(c) => (*c, CentroidSource::Annotation),
        None => {
            log::warn!("{subject}/{id}: no centroid annotation, using the surface centroid");
            (mesh_centroid(&mesh)?, CentroidSource::SurfaceFallback)
        }
    };
    let distances = centroid_distances(&mesh, &centroid)?;
    let bandwidth = params.bandwidth_mm.map_or(Bandwidth::Auto, Bandwidth::Fixed);
    let density = estimate_density(distances.values(), bandwidth)?;
    let max_distance = distances.values().iter().copied().fold(0.0, f64::max);
    let thresholds = vertebra_thresholds(&density, max_distance)?;
    let regions = segment_vertebra(distances.values(), &thresholds)?;

    let mut textures = BTreeMap::new();
    for kind in CriterionKind::ALL {
        let criterion = MappingCriterion::new(kind, params.search_radius_mm)?;
        let t = map_grey_levels(&mesh, &exam.grid, &criterion, id)?;
        textures.insert(kind, t.values);
    }
    let records = vertebra_records(subject, id, &thresholds, &regions, &textures)?;

    let n = regions.len().max(1) as f64;
    let region_fractions = [0.0, 1.0, 2.0].map(|r| regions.values().iter().filter(|v| **v == r).count() as f64 / n);
    for (_, t) in textures {
        mesh.set_channel(t)?;
    }
    mesh.set_channel(distances)?;
    mesh.set_channel(regions)?;
    Ok(VertebraResult {
        report: VertebraReport {
            subject: subject.to_string(),
            vertebra_id: id,
            name: exam.name_of(id),
            mesh: format!("meshes/{subject}_vertebra_{id}.ply"),
            centroid: [centroid.x, centroid.y, centroid.z],
            centroid_source,
            thresholds,
            region_fractions,
            density,
        },
        records,
        mesh: mesh.with_bone_id(id),
    })
}

/// CSV rendering of the geometry-tissue records, one row per record.
pub fn records_csv(records: &[TissueRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

/// Characterise every labelled vertebra of every exam and write the bundle.
pub fn cmd_spine(exam_dirs: &[&Path], out: &Path, params: &SpineParams) -> Result<Outcome> {
    if exam_dirs.is_empty() {
        return Err(Error::InvalidParameter("no exam directory given".into()));
    }
    let mut exams = Vec::new();
    for dir in exam_dirs {
        exams.push((subject_name(dir), Exam::load(dir)?));
    }
    let mut names: Vec<&String> = exams.iter().map(|(s, _)| s).collect();
    names.sort();
    names.dedup();
    if names.len() != exams.len() {
        return Err(Error::InvalidParameter(
            "exam directories must have distinct names".into(),
        ));
    }

    let jobs: Vec<(usize, i32)> = exams
        .iter()
        .enumerate()
        .flat_map(|(e, (_, exam))| exam.bone_ids().into_iter().map(move |id| (e, id)))
        .collect();
    let results: Vec<(usize, i32, Result<VertebraResult>)> = jobs
        .par_iter()
        .map(|&(e, id)| {
            let (subject, exam) = &exams[e];
            (e, id, process_vertebra(exam, subject, id, params))
        })
        .collect();

    let mesh_dir = out.join("meshes");
    fs::create_dir_all(&mesh_dir).map_err(|e| Error::io(&mesh_dir, e))?;
    let mut vertebrae = Vec::new();
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    let mut meshes = Vec::new();
    for (e, id, r) in results {
        let subject = &exams[e].0;
        match r {
            Ok(v) => {
                records.extend(v.records);
                meshes.push((v.report.mesh.clone(), v.mesh));
                vertebrae.push(v.report);
            }
            Err(err) => {
                log::warn!("{subject}/{id} skipped: {err}");
                skipped.push(SkippedVertebra {
                    subject: subject.clone(),
                    inner: Skipped::new(id, &err.to_string()),
                });
            }
        }
    }
    flag_outliers(&mut records);
    let outliers = flagged_vertebrae(&records);

    for (rel, mesh) in &meshes {
        save_colored_mesh(mesh, channel::REGION, Colormap::Regions, &out.join(rel))?;
    }
    fs::write(out.join("spine_report.csv"), records_csv(&records)?).map_err(|e| Error::io(out, e))?;
    let inputs: Vec<InputRecord> = exams.iter().map(|(_, e)| e.record()).collect();
    let report = SpineReport {
        tool_version: TOOL_VERSION.into(),
        inputs: inputs.clone(),
        params: params.clone(),
        vertebrae,
        records,
        outliers,
        skipped: skipped.clone(),
    };
    write_json(&out.join("spine_report.json"), &report)?;
    write_json(
        &out.join("manifest.json"),
        &SpineManifest {
            kind: "spine".into(),
            tool_version: TOOL_VERSION.into(),
            inputs,
            params: params.clone(),
            meshes: meshes.into_iter().map(|(rel, _)| rel).collect(),
        },
    )?;
    Ok(if skipped.is_empty() {
        Outcome::Success
    } else {
        Outcome::Partial
    })
}
