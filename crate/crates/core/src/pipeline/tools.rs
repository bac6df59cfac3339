//! Single-mesh utilities: grey-level mapping and fusion of existing channels.

use std::path::Path;

use super::exam::{texture_grid, Exam};
use super::{write_json, Outcome};
use crate::error::Result;
use crate::fusion::{fuse_linear, fuse_multiply, FusionMode};
use crate::mesh::{channel, load_mesh, save_colored_mesh, save_mesh, Colormap, MeshFormat, TriangleMesh};
use crate::texture::{map_grey_levels, MappingCriterion, TextureReport};

fn format_of(path: &Path) -> MeshFormat {
    MeshFormat::from_path(path).unwrap_or(MeshFormat::Ply)
}

pub struct MapArgs<'a> {
    pub exam: &'a Path,
    pub label: i32,
    /// Mesh to texture; the exam's surface for `label` when absent.
    pub mesh: Option<&'a Path>,
    pub criterion: MappingCriterion,
    /// Normalise grey levels to [0, 1] first.
    pub normalize: bool,
    pub out: &'a Path,
}

/// Map grey levels onto a mesh and save it with a `tex_<criterion>` channel
/// plus a JSON texture report next to it.
pub fn cmd_map(args: &MapArgs) -> Result<Outcome> {
    let exam = Exam::load(args.exam)?;
    let mut mesh: TriangleMesh = match args.mesh {
        Some(p) => load_mesh(p, format_of(p))?,
        None => exam.mesh(args.label)?,
    };
    let grid = if args.normalize {
        texture_grid(&exam.grid)?
    } else {
        exam.grid.clone()
    };
    let tex = map_grey_levels(&mesh, &grid, &args.criterion, args.label)?;
    let report = TextureReport::new(args.label, "exam", &tex, None)?;
    let name = tex.values.name().to_string();
    let cmap = Colormap::for_range(tex.values.range());
    mesh.set_channel(tex.values)?;
    save_colored_mesh(&mesh, &name, cmap, args.out)?;
    write_json(&args.out.with_extension("json"), &report)?;
    Ok(if report.unmapped_count > 0 {
        Outcome::Partial
    } else {
        Outcome::Success
    })
}

/// Add fused channels computed from the `d1` and `d2` channels of a mesh.
pub fn cmd_fuse(mesh_path: &Path, mode: FusionMode, epsilons: &[f64], out: &Path) -> Result<Outcome> {
    let mut mesh = load_mesh(mesh_path, format_of(mesh_path))?;
    let d1 = mesh.channel(channel::D1)?.clone();
    let d2 = mesh.channel(channel::D2)?.clone();
    let shown = match mode {
        FusionMode::Multiply => {
            mesh.set_channel(fuse_multiply(&d1, &d2)?)?;
            channel::FUSED.to_string()
        }
        FusionMode::Linear => {
            let mut last = None;
            for &e in epsilons {
                let f = fuse_linear(&d1, &d2, e)?;
                last = Some(f.name().to_string());
                mesh.set_channel(f)?;
            }
            last.ok_or_else(|| crate::Error::InvalidParameter("no epsilon given".into()))?
        }
    };
    match format_of(out) {
        MeshFormat::Ply => {
            let cmap = Colormap::for_range(mesh.channel(&shown)?.range());
            save_colored_mesh(&mesh, &shown, cmap, out)?
        }
        MeshFormat::Off => save_mesh(&mesh, out, MeshFormat::Off)?,
    }
    Ok(Outcome::Success)
}
