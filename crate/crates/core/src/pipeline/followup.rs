//! Baseline versus follow-up comparison of every bone in a district.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{D2Normalization, FollowupParams};
use super::exam::{texture_grid, Exam, InputRecord};
use super::{write_json, Outcome, Skipped, TOOL_VERSION};
use crate::error::{Error, Result};
use crate::fusion::{fuse_linear, fuse_multiply};
use crate::mesh::{channel, save_colored_mesh, ChannelRange, Colormap, ScalarField, TriangleMesh};
use crate::registration::{
    distance_field, finite_range, normalize_min_max, rigid_icp, FollowupDistances, RegistrationReport, RigidTransform,
};
use crate::texture::{
    map_grey_levels, map_grey_levels_with_sides, texture_difference, MappingCriterion, Side, TextureReport,
};
use crate::volume::VoxelGrid;

/// Bundle-level provenance for a follow-up run, `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FollowupManifest {
    pub kind: String,
    pub tool_version: String,
    pub baseline: InputRecord,
    pub followup: InputRecord,
    pub params: FollowupParams,
    pub meshes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonDetections {
    pub epsilon: f64,
    pub channel: String,
    /// Vertices whose fused value exceeds the detection threshold.
    pub count: usize,
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoneSummary {
    pub bone_id: i32,
    pub name: String,
    pub vertex_count: usize,
    pub hausdorff_mm: f64,
    pub icp_converged: bool,
    pub d2_max_mm: f64,
    pub d2_degenerate_range: bool,
    pub d1_unmapped: usize,
    /// Largest multiply-fused value and the follow-up position where it occurs.
    pub fused_max: Option<f64>,
    pub fused_argmax: Option<[f64; 3]>,
    pub detections: Vec<EpsilonDetections>,
}

/// `followup_report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FollowupReport {
    pub detection_threshold: f64,
    pub bones: Vec<BoneSummary>,
    pub skipped: Vec<Skipped>,
}

struct BoneResult {
    id: i32,
    followup_mesh: TriangleMesh,
    distances: FollowupDistances,
    registration: RegistrationReport,
    textures: [TextureReport; 2],
    d1: ScalarField,
}

/// Per baseline voxel, the side of the follow-up mask it corresponds to
/// after mapping its center into follow-up space.
fn resample_sides(target: &VoxelGrid, source: &VoxelGrid, label: i32, to_source: &RigidTransform) -> Result<Vec<Side>> {
    let labels = source.labels().ok_or(Error::MissingMask)?;
    Ok((0..target.len())
        .into_par_iter()
        .map(|i| {
            let p = to_source.apply(&target.center_of(target.grid_index(i)));
            match source.world_to_index(&p).index() {
                Some(idx) if labels[source.linear_index(idx)] == label => Side::Inside,
                _ => Side::Outside,
            }
        })
        .collect())
}

fn process_bone(
    id: i32,
    baseline: &Exam,
    followup: &Exam,
    base_tex: &VoxelGrid,
    follow_tex: &VoxelGrid,
    params: &FollowupParams,
) -> Result<BoneResult> {
    let base_mesh = baseline.mesh(id)?;
    let follow_mesh = followup.mesh(id)?;
    let icp = rigid_icp(&follow_mesh, &base_mesh, &params.icp)?;
    let registered = icp.transform.transform_mesh(&follow_mesh);
    let distances = distance_field(&registered, &base_mesh, None, params.distance)?;
    let registration = RegistrationReport {
        bone_id: id,
        iterations: icp.iterations,
        final_rms_mm: icp.final_rms,
        hausdorff_mm: distances.hausdorff_mm,
        converged: icp.converged,
        transform: icp.transform.to_record(),
    };

    let criterion = MappingCriterion::new(params.criterion, params.search_radius_mm)?;
    // Follow-up image sampled on the follow-up surface, sides from its own mask.
    let t2 = map_grey_levels(&follow_mesh, follow_tex, &criterion, id)?;
    // Baseline image sampled on the registered follow-up surface, sides from
    // the follow-up mask carried into baseline space.
    let sides = match params.criterion {
        crate::texture::CriterionKind::Euclidean => None,
        _ => Some(resample_sides(base_tex, follow_tex, id, &icp.transform.inverse())?),
    };
    let t1 = map_grey_levels_with_sides(&registered, base_tex, &criterion, sides.as_deref())?;
    let d1 = texture_difference(&t1, &t2)?;
    let textures = [
        TextureReport::new(id, "baseline", &t1, None)?,
        TextureReport::new(id, "followup", &t2, None)?,
    ];

    let mut mesh = follow_mesh.with_bone_id(id);
    mesh.set_channel(
        t1.values
            .renamed(format!("{}_baseline", channel::texture(params.criterion.as_str()))),
    )?;
    mesh.set_channel(t2.values)?;
    Ok(BoneResult {
        id,
        followup_mesh: mesh,
        distances,
        registration,
        textures,
        d1,
    })
}

fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, v) in values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        if best.is_none_or(|b| *v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Run the follow-up comparison and write the bundle into `out`.
pub fn cmd_followup(baseline_dir: &Path, followup_dir: &Path, out: &Path, params: &FollowupParams) -> Result<Outcome> {
    for &e in &params.epsilon_sweep {
        if !(e > 0.0) {
            return Err(Error::InvalidEpsilon(e));
        }
    }
    let baseline = Exam::load(baseline_dir)?;
    let followup = Exam::load(followup_dir)?;
    let base_ids = baseline.bone_ids();
    let follow_ids = followup.bone_ids();
    let mut skipped = Vec::new();
    for id in base_ids.iter().filter(|i| !follow_ids.contains(i)) {
        log::warn!("bone {id} has no follow-up counterpart; skipped");
        skipped.push(Skipped::new(*id, "missing in follow-up exam"));
    }
    for id in follow_ids.iter().filter(|i| !base_ids.contains(i)) {
        log::warn!("bone {id} has no baseline counterpart; skipped");
        skipped.push(Skipped::new(*id, "missing in baseline exam"));
    }
    let shared: Vec<i32> = base_ids.iter().copied().filter(|i| follow_ids.contains(i)).collect();
    if shared.is_empty() {
        return Err(Error::InvalidParameter("the exams share no bone label".into()));
    }

    let base_tex = texture_grid(&baseline.grid)?;
    let follow_tex = texture_grid(&followup.grid)?;
    let results: Vec<(i32, Result<BoneResult>)> = shared
        .par_iter()
        .map(|&id| {
            (
                id,
                process_bone(id, &baseline, &followup, &base_tex, &follow_tex, params),
            )
        })
        .collect();
    let mut done = Vec::new();
    for (id, r) in results {
        match r {
            Ok(b) => done.push(b),
            Err(e) => {
                log::warn!("bone {id} failed: {e}");
                skipped.push(Skipped::new(id, &e.to_string()));
            }
        }
    }
    skipped.sort_by_key(|s| s.bone_id);

    if params.normalization == D2Normalization::District {
        let all: Vec<f64> = done
            .iter()
            .flat_map(|b| b.distances.per_vertex_mm.values().iter().copied())
            .collect();
        let (lo, hi) = finite_range(&all).unwrap_or((0.0, 0.0));
        for b in &mut done {
            let (scaled, degenerate) = normalize_min_max(b.distances.per_vertex_mm.values(), lo, hi);
            b.distances.normalized = ScalarField::new(channel::D2, scaled, ChannelRange::Unit)?;
            b.distances.degenerate_range = degenerate;
        }
    }

    for sub in ["meshes", "registration", "texture"] {
        let d = out.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut summaries = Vec::new();
    let mut mesh_files = Vec::new();
    for mut b in done {
        let d2 = b.distances.normalized.clone();
        let fused = fuse_multiply(&b.d1, &d2)?;
        let mut detections = Vec::new();
        for &eps in &params.epsilon_sweep {
            let f = fuse_linear(&b.d1, &d2, eps)?;
            detections.push(EpsilonDetections {
                epsilon: eps,
                channel: f.name().to_string(),
                count: f.values().iter().filter(|v| **v > params.detection_threshold).count(),
                max: argmax(f.values()).map(|i| f.values()[i]),
            });
            b.followup_mesh.set_channel(f)?;
        }
        let best = argmax(fused.values());
        summaries.push(BoneSummary {
            bone_id: b.id,
            name: followup.name_of(b.id),
            vertex_count: b.followup_mesh.vertex_count(),
            hausdorff_mm: b.distances.hausdorff_mm,
            icp_converged: b.registration.converged,
            d2_max_mm: b.distances.per_vertex_mm.values().iter().copied().fold(0.0, f64::max),
            d2_degenerate_range: b.distances.degenerate_range,
            d1_unmapped: b.d1.values().iter().filter(|v| v.is_nan()).count(),
            fused_max: best.map(|i| fused.values()[i]),
            fused_argmax: best.map(|i| {
                let p = b.followup_mesh.vertices()[i];
                [p.x, p.y, p.z]
            }),
            detections,
        });
        b.followup_mesh.set_channel(b.distances.per_vertex_mm)?;
        b.followup_mesh.set_channel(d2)?;
        b.followup_mesh.set_channel(b.d1)?;
        b.followup_mesh.set_channel(fused)?;

        let rel = format!("meshes/bone_{}.ply", b.id);
        save_colored_mesh(&b.followup_mesh, channel::FUSED, Colormap::Diverging, &out.join(&rel))?;
        mesh_files.push(rel);
        write_json(&out.join(format!("registration/bone_{}.json", b.id)), &b.registration)?;
        for t in &b.textures {
            write_json(&out.join(format!("texture/bone_{}_{}.json", b.id, t.source)), t)?;
        }
    }

    let report = FollowupReport {
        detection_threshold: params.detection_threshold,
        bones: summaries,
        skipped: skipped.clone(),
    };
    write_json(&out.join("followup_report.json"), &report)?;
    let manifest = FollowupManifest {
        kind: "followup".into(),
        tool_version: TOOL_VERSION.into(),
        baseline: baseline.record(),
        followup: followup.record(),
        params: params.clone(),
        meshes: mesh_files,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(if skipped.is_empty() {
        Outcome::Success
    } else {
        Outcome::Partial
    })
}
