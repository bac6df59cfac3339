//! Loading an exam directory.
//!
//! An exam directory holds one of
//! - `volume.mvol` whose header references its label file, or
//! - `volume.nii` (or `.nii`-named intensities) plus `labels.nii`,
//!
//! and optionally `legend.json` (label id to name), `centroids.json`
//! (label id to `[x, y, z]` mm) and `meshes/bone_<id>.ply|off`. Missing
//! meshes are extracted from the mask.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{extract_isosurface, load_mesh, MeshFormat, TriangleMesh};
use crate::volume::{load_label_legend, load_mvol, load_nifti, VoxelGrid};
use crate::Point;

#[derive(Debug, Clone)]
pub struct Exam {
    pub dir: PathBuf,
    pub volume_file: PathBuf,
    pub grid: VoxelGrid,
    pub legend: BTreeMap<i32, String>,
    pub centroids: Option<BTreeMap<i32, Point>>,
}

/// Provenance entry for one input exam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub dir: String,
    pub volume: String,
    pub volume_bytes: u64,
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
}

fn load_nifti_exam(dir: &Path, volume: &Path) -> Result<VoxelGrid> {
    let grid = load_nifti(volume)?;
    let label_path = dir.join("labels.nii");
    if !label_path.exists() {
        return Err(Error::MissingMask);
    }
    let labels = load_nifti(&label_path)?;
    if labels.dims() != grid.dims() {
        return Err(Error::SizeMismatch {
            expected: grid.len(),
            found: labels.len(),
        });
    }
    let ids = labels.intensities().iter().map(|&v| v.round() as i32).collect();
    grid.with_labels(ids)
}

impl Exam {
    pub fn load(dir: &Path) -> Result<Self> {
        let mvol = dir.join("volume.mvol");
        let nifti = dir.join("volume.nii");
        let (volume_file, grid) = if mvol.exists() {
            (mvol.clone(), load_mvol(&mvol)?)
        } else if nifti.exists() {
            (nifti.clone(), load_nifti_exam(dir, &nifti)?)
        } else {
            return Err(Error::io(
                &mvol,
                std::io::Error::new(std::io::ErrorKind::NotFound, "no volume.mvol or volume.nii"),
            ));
        };
        if grid.labels().is_none() {
            return Err(Error::MissingMask);
        }
        let legend_path = dir.join("legend.json");
        let legend = if legend_path.exists() {
            load_label_legend(&legend_path)?
        } else {
            grid.label_ids()
                .into_iter()
                .map(|id| (id, format!("label_{id}")))
                .collect()
        };
        let centroid_path = dir.join("centroids.json");
        let centroids = if centroid_path.exists() {
            let text = fs::read_to_string(&centroid_path).map_err(|e| Error::io(&centroid_path, e))?;
            let raw: BTreeMap<String, [f64; 3]> = serde_json::from_str(&text)?;
            let parsed = raw
                .into_iter()
                .map(|(k, v)| {
                    k.trim()
                        .parse::<i32>()
                        .map(|id| (id, Point::from(v)))
                        .map_err(|_| Error::MalformedHeader(format!("centroid key '{k}' is not an integer")))
                })
                .collect::<Result<BTreeMap<_, _>>>()?;
            Some(parsed)
        } else {
            None
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            volume_file,
            grid,
            legend,
            centroids,
        })
    }

    /// Label ids present in the mask, ascending.
    pub fn bone_ids(&self) -> Vec<i32> {
        self.grid.label_ids()
    }

    pub fn name_of(&self, id: i32) -> String {
        self.legend.get(&id).cloned().unwrap_or_else(|| format!("label_{id}"))
    }

    /// Stored surface for `id`, or one extracted from the mask.
    pub fn mesh(&self, id: i32) -> Result<TriangleMesh> {
        let mesh_dir = self.dir.join("meshes");
        for (ext, format) in [("ply", MeshFormat::Ply), ("off", MeshFormat::Off)] {
            let path = mesh_dir.join(format!("bone_{id}.{ext}"));
            if path.exists() {
                return Ok(load_mesh(&path, format)?.with_bone_id(id));
            }
        }
        extract_isosurface(&self.grid, id)
    }

    pub fn record(&self) -> InputRecord {
        InputRecord {
            dir: self.dir.display().to_string(),
            volume: self
                .volume_file
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            volume_bytes: fs::metadata(&self.volume_file).map(|m| m.len()).unwrap_or(0),
            dims: self.grid.dims(),
            spacing: self.grid.spacing(),
        }
    }
}

/// Grey levels as used for texture differences: volumes already within
/// [0, 1] are kept, anything else is min-max normalised.
pub fn texture_grid(grid: &VoxelGrid) -> Result<VoxelGrid> {
    let (lo, hi) = grid.intensity_range();
    if lo >= 0.0 && hi <= 1.0 {
        Ok(grid.clone())
    } else {
        grid.normalize_intensities()
    }
}
