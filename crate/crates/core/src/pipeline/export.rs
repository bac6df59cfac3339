//! Static bundle for the browser viewer.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::spine_cmd::SpineReport;
use super::{write_json, Outcome};
use crate::error::{Error, Result};
use crate::fusion::DEFAULT_SWEEP;
use crate::mesh::{channel, load_mesh, ChannelRange, Colormap, MeshFormat};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelEntry {
    pub name: String,
    pub range: ChannelRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshEntry {
    pub id: String,
    pub file: String,
    pub bone_id: Option<i32>,
    pub vertex_count: usize,
    pub channels: Vec<ChannelEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveEntry {
    pub sample_xs: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
    pub inflexions: Vec<f64>,
    pub thresholds: [f64; 3],
}

/// `manifest.json` of a viewer bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewerManifest {
    pub version: u32,
    pub kind: String,
    pub meshes: Vec<MeshEntry>,
    pub epsilon_presets: Vec<f64>,
    /// Keyed by mesh id.
    pub density_curves: BTreeMap<String, CurveEntry>,
    /// Colour scheme per channel name.
    pub colormaps: BTreeMap<String, Colormap>,
}

#[derive(Deserialize)]
struct BundleHead {
    kind: String,
    meshes: Vec<String>,
    #[serde(default)]
    params: Option<serde_json::Value>,
}

fn incomplete(msg: impl Into<String>) -> Error {
    Error::IncompleteBundle(msg.into())
}

/// Copy the meshes of an analysis bundle into `out` with a viewer manifest.
/// Follow-up bundles must carry `d1` and `d2` on every mesh.
pub fn cmd_export_viewer(bundle: &Path, out: &Path) -> Result<Outcome> {
    let manifest_path = bundle.join("manifest.json");
    if !manifest_path.exists() {
        return Err(incomplete(format!("{} has no manifest.json", bundle.display())));
    }
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let head: BundleHead = serde_json::from_str(&text)?;
    if head.meshes.is_empty() {
        return Err(incomplete("bundle lists no meshes"));
    }
    let required: &[&str] = match head.kind.as_str() {
        "followup" => &[channel::D1, channel::D2],
        "spine" => &[channel::REGION],
        other => return Err(incomplete(format!("unknown bundle kind '{other}'"))),
    };
    // Spine bundles carry no fused channels and so no presets.
    let epsilon_presets = match head.kind.as_str() {
        "followup" => head
            .params
            .as_ref()
            .and_then(|p| p.get("epsilon_sweep"))
            .and_then(|v| serde_json::from_value::<Vec<f64>>(v.clone()).ok())
            .unwrap_or_else(|| DEFAULT_SWEEP.to_vec()),
        _ => Vec::new(),
    };

    let mesh_out = out.join("meshes");
    fs::create_dir_all(&mesh_out).map_err(|e| Error::io(&mesh_out, e))?;
    let mut meshes = Vec::new();
    let mut colormaps = BTreeMap::new();
    for rel in &head.meshes {
        let src = bundle.join(rel);
        if !src.exists() {
            return Err(incomplete(format!("missing mesh file {rel}")));
        }
        let mesh = load_mesh(&src, MeshFormat::Ply)?;
        let id = Path::new(rel)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| rel.clone());
        for ch in required {
            if !mesh.has_channel(ch) {
                return Err(Error::MissingChannel {
                    mesh: id.clone(),
                    channel: ch.to_string(),
                });
            }
        }
        let channels: Vec<ChannelEntry> = mesh
            .channels()
            .map(|c| ChannelEntry {
                name: c.name().to_string(),
                range: c.range(),
            })
            .collect();
        for c in &channels {
            colormaps.insert(c.name.clone(), Colormap::for_range(c.range));
        }
        let file = format!("meshes/{id}.ply");
        fs::copy(&src, out.join(&file)).map_err(|e| Error::io(&src, e))?;
        meshes.push(MeshEntry {
            id,
            file,
            bone_id: mesh.bone_id,
            vertex_count: mesh.vertex_count(),
            channels,
        });
    }

    let mut density_curves = BTreeMap::new();
    if head.kind == "spine" {
        let path = bundle.join("spine_report.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let report: SpineReport = serde_json::from_str(&text)?;
        for v in report.vertebrae {
            let id = Path::new(&v.mesh)
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            density_curves.insert(
                id,
                CurveEntry {
                    inflexions: v.density.inflexion_distances(),
                    sample_xs: v.density.sample_xs,
                    density: v.density.density,
                    bandwidth: v.density.bandwidth,
                    thresholds: [v.thresholds.t1, v.thresholds.t2, v.thresholds.t3],
                },
            );
        }
    }

    let manifest = ViewerManifest {
        version: MANIFEST_VERSION,
        kind: head.kind,
        meshes,
        epsilon_presets,
        density_curves,
        colormaps,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(Outcome::Success)
}
