//! Synthetic exams with known ground truth, standing in for clinical data.
//!
//! Every generator is deterministic for a given seed. Exams are written as
//! directories holding `volume.mvol` (with its label companion),
//! `legend.json`, optional `centroids.json` and `meshes/bone_<id>.ply`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{extract_isosurface, save_mesh, MeshFormat, TriangleMesh};
use crate::volume::{write_label_legend, write_mvol, MvolDtype, VoxelGrid};
use crate::Point;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhantomKind {
    /// Five carpal-like bones at baseline and follow-up; one eroded, one
    /// with a purely geometric bump.
    WristPair,
    /// Five vertebrae with body, arch and process parts.
    SpineHealthy,
    /// As `SpineHealthy` with one collapsed, less dense vertebral body.
    SpineFractured,
    /// One spherical bone at baseline and follow-up, eroded at the top.
    SphereDent,
}

impl PhantomKind {
    pub const ALL: [PhantomKind; 4] = [
        PhantomKind::WristPair,
        PhantomKind::SpineHealthy,
        PhantomKind::SpineFractured,
        PhantomKind::SphereDent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PhantomKind::WristPair => "wrist-pair",
            PhantomKind::SpineHealthy => "spine-healthy",
            PhantomKind::SpineFractured => "spine-fractured",
            PhantomKind::SphereDent => "sphere-dent",
        }
    }
}

impl fmt::Display for PhantomKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PhantomKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown phantom kind '{s}'")))
    }
}

pub const DEFAULT_SEED: u64 = 7;

/// Follow-up phantom intensities (normalised grey levels).
pub const SOFT_TISSUE: f64 = 0.2;
pub const BONE: f64 = 0.9;
pub const ERODED: f64 = 0.1;
const NOISE_SIGMA: f64 = 0.01;

/// Spine phantom Hounsfield units.
pub const HU_BACKGROUND: f64 = 50.0;
pub const HU_BODY: f64 = 300.0;
pub const HU_BODY_FRACTURED: f64 = 150.0;
pub const HU_ARCH: f64 = 700.0;
pub const HU_PROCESS: f64 = 900.0;

pub const BODY_RADIUS: f64 = 10.0;
pub const FRACTURED_BODY_RADIUS: f64 = 6.0;
pub const ARCH_DISTANCE: f64 = 18.0;
pub const PROCESS_DISTANCE: f64 = 26.0;
/// Radius of the small balls forming the arch and the processes.
pub const PART_RADIUS: f64 = 2.0;
/// Id of the collapsed vertebra in the fractured phantom.
pub const FRACTURED_ID: i32 = 22;

const DENT_DEPTH: f64 = 2.0;
const DENT_RADIUS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoneTruth {
    pub id: i32,
    pub name: String,
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
    /// Extra ball breaking the ellipsoid's symmetry.
    pub lobe_center: Option<[f64; 3]>,
    pub lobe_radius: f64,
}

/// A spherical cut into a bone surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DentTruth {
    pub bone_id: i32,
    /// Deepest point of the dent: the undisturbed surface point moved
    /// `depth_mm` inwards along the normal.
    pub center: [f64; 3],
    pub surface_point: [f64; 3],
    pub normal: [f64; 3],
    pub depth_mm: f64,
    pub ball_center: [f64; 3],
    pub ball_radius: f64,
    pub intensity_before: f64,
    pub intensity_after: f64,
}

/// A ball of new bone added at follow-up, intensity unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BumpTruth {
    pub bone_id: i32,
    pub surface_point: [f64; 3],
    pub normal: [f64; 3],
    pub height_mm: f64,
    pub ball_center: [f64; 3],
    pub ball_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertebraTruth {
    pub id: i32,
    pub name: String,
    pub centroid: [f64; 3],
    pub body_radius: f64,
    pub body_hu: f64,
    pub arch_centers: Vec<[f64; 3]>,
    pub process_centers: Vec<[f64; 3]>,
    pub part_radius: f64,
    pub fractured: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub kind: PhantomKind,
    pub seed: u64,
    pub spacing_mm: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bones: Vec<BoneTruth>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dent: Option<DentTruth>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bump: Option<BumpTruth>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub vertebrae: Vec<VertebraTruth>,
    /// Shell distances from the body centroid (body, arch, processes).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shell_distances_mm: Option<[f64; 3]>,
}

fn arr(p: &Point) -> [f64; 3] {
    [p.x, p.y, p.z]
}

/// A voxel grid with an empty mask, filled by evaluating `f` at every center.
fn paint(dims: [usize; 3], spacing: f64, origin: [f64; 3], f: impl Fn(&Point) -> (i32, f64)) -> Result<VoxelGrid> {
    let n: usize = dims.iter().product();
    let template = VoxelGrid::new(dims, [spacing; 3], origin, vec![0.0; n])?;
    let (labels, values): (Vec<i32>, Vec<f64>) = (0..n).map(|i| f(&template.center_of(template.grid_index(i)))).unzip();
    VoxelGrid::new(dims, [spacing; 3], origin, values)?.with_labels(labels)
}

fn add_noise(grid: VoxelGrid, seed: u64) -> Result<VoxelGrid> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");
    let values = grid
        .intensities()
        .iter()
        .map(|v| (v + normal.sample(&mut rng)).clamp(0.0, 1.0))
        .collect();
    let labels = grid.labels().map(<[i32]>::to_vec);
    let noisy = VoxelGrid::new(grid.dims(), grid.spacing(), grid.origin(), values)?;
    match labels {
        Some(l) => noisy.with_labels(l),
        None => Ok(noisy),
    }
}

fn inside_bone(b: &BoneTruth, p: &Point) -> bool {
    let c = Point::from(b.center);
    let q = p - c;
    let e = (q.x / b.semi_axes[0]).powi(2) + (q.y / b.semi_axes[1]).powi(2) + (q.z / b.semi_axes[2]).powi(2);
    e <= 1.0
        || b.lobe_center
            .is_some_and(|l| (p - Point::from(l)).norm() <= b.lobe_radius)
}

fn top_pole(b: &BoneTruth) -> Point {
    Point::new(b.center[0], b.center[1], b.center[2] + b.semi_axes[2])
}

fn dent_on(b: &BoneTruth) -> DentTruth {
    let s = top_pole(b);
    let n = crate::Vector::z();
    DentTruth {
        bone_id: b.id,
        center: arr(&(s - n * DENT_DEPTH)),
        surface_point: arr(&s),
        normal: [0.0, 0.0, 1.0],
        depth_mm: DENT_DEPTH,
        ball_center: arr(&(s + n * (DENT_RADIUS - DENT_DEPTH))),
        ball_radius: DENT_RADIUS,
        intensity_before: BONE,
        intensity_after: ERODED,
    }
}

/// Bump grown outwards from the surface point `s` along the unit normal `n`.
fn bump_at(bone_id: i32, s: Point, n: crate::Vector) -> BumpTruth {
    BumpTruth {
        bone_id,
        surface_point: arr(&s),
        normal: arr(&Point::from(n)),
        height_mm: DENT_DEPTH,
        ball_center: arr(&(s - n * (DENT_RADIUS - DENT_DEPTH))),
        ball_radius: DENT_RADIUS,
    }
}

/// Baseline and follow-up grids for a set of bones with optional dent/bump.
fn bone_pair(
    bones: &[BoneTruth],
    dims: [usize; 3],
    spacing: f64,
    dent: Option<&DentTruth>,
    bump: Option<&BumpTruth>,
    seed: u64,
) -> Result<(VoxelGrid, VoxelGrid)> {
    let base_voxel = |p: &Point| -> (i32, f64) {
        bones
            .iter()
            .find(|b| inside_bone(b, p))
            .map_or((0, SOFT_TISSUE), |b| (b.id, BONE))
    };
    let baseline = paint(dims, spacing, [0.0; 3], base_voxel)?;
    let followup = paint(dims, spacing, [0.0; 3], |p| {
        let (mut label, mut value) = base_voxel(p);
        if let Some(d) = dent {
            if label == d.bone_id && (p - Point::from(d.ball_center)).norm() <= d.ball_radius {
                (label, value) = (0, d.intensity_after);
            }
        }
        if let Some(b) = bump {
            if label == 0 && (p - Point::from(b.ball_center)).norm() <= b.ball_radius {
                (label, value) = (b.bone_id, BONE);
            }
        }
        (label, value)
    })?;
    Ok((add_noise(baseline, seed)?, add_noise(followup, seed.wrapping_add(1))?))
}

fn write_exam(dir: &Path, grid: &VoxelGrid, dtype: MvolDtype, legend: &BTreeMap<i32, String>) -> Result<()> {
    let mesh_dir = dir.join("meshes");
    fs::create_dir_all(&mesh_dir).map_err(|e| Error::io(&mesh_dir, e))?;
    write_mvol(&dir.join("volume.mvol"), grid, dtype)?;
    write_label_legend(&dir.join("legend.json"), legend)?;
    for &id in legend.keys() {
        let mesh: TriangleMesh = extract_isosurface(grid, id)?;
        save_mesh(&mesh, &mesh_dir.join(format!("bone_{id}.ply")), MeshFormat::Ply)?;
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

const CARPALS: [&str; 5] = ["scaphoid", "lunate", "triquetrum", "capitate", "hamate"];

/// Bone layout of the wrist phantom (spacing 0.5 mm, bones along x).
pub fn wrist_bones() -> Vec<BoneTruth> {
    (0..5)
        .map(|k| {
            let kf = k as f64;
            let center = [10.0 + 16.0 * kf, 12.0, 12.0];
            // Well separated semi-axes: no bone is close to rotationally symmetric.
            let semi_axes = [6.0 - 0.25 * kf, 4.5 - 0.15 * kf, 3.5 - 0.1 * kf];
            BoneTruth {
                id: k + 1,
                name: CARPALS[k as usize].to_string(),
                center,
                semi_axes,
                lobe_center: Some([center[0] - 3.0, center[1] - 2.0, center[2] - 1.5]),
                lobe_radius: 2.5,
            }
        })
        .collect()
}

/// Id of the eroded bone; the other four are unchanged at follow-up.
pub const WRIST_ERODED_ID: i32 = 2;

fn generate_wrist(out: &Path, seed: u64) -> Result<GroundTruth> {
    let spacing = 0.5;
    let bones = wrist_bones();
    let dent = dent_on(&bones[(WRIST_ERODED_ID - 1) as usize]);
    let dims = [169, 49, 49];
    let (baseline, followup) = bone_pair(&bones, dims, spacing, Some(&dent), None, seed)?;
    let legend: BTreeMap<i32, String> = bones.iter().map(|b| (b.id, b.name.clone())).collect();
    write_exam(&out.join("baseline"), &baseline, MvolDtype::F32, &legend)?;
    write_exam(&out.join("followup"), &followup, MvolDtype::F32, &legend)?;
    Ok(GroundTruth {
        kind: PhantomKind::WristPair,
        seed,
        spacing_mm: spacing,
        bones,
        dent: Some(dent),
        bump: None,
        vertebrae: Vec::new(),
        shell_distances_mm: None,
    })
}

/// A sphere eroded at the top (dent plus darkening) that also grows a
/// bump of unchanged intensity on its +x side.
fn generate_sphere_dent(out: &Path, seed: u64) -> Result<GroundTruth> {
    let spacing = 0.5;
    let bone = BoneTruth {
        id: 1,
        name: "sphere".into(),
        center: [12.0, 12.0, 12.0],
        semi_axes: [8.0; 3],
        lobe_center: None,
        lobe_radius: 0.0,
    };
    let dent = dent_on(&bone);
    let bump = bump_at(bone.id, Point::new(20.0, 12.0, 12.0), crate::Vector::x());
    let (baseline, followup) = bone_pair(
        std::slice::from_ref(&bone),
        [49; 3],
        spacing,
        Some(&dent),
        Some(&bump),
        seed,
    )?;
    let legend = BTreeMap::from([(1, "sphere".to_string())]);
    write_exam(&out.join("baseline"), &baseline, MvolDtype::F32, &legend)?;
    write_exam(&out.join("followup"), &followup, MvolDtype::F32, &legend)?;
    Ok(GroundTruth {
        kind: PhantomKind::SphereDent,
        seed,
        spacing_mm: spacing,
        bones: vec![bone],
        dent: Some(dent),
        bump: Some(bump),
        vertebrae: Vec::new(),
        shell_distances_mm: None,
    })
}

const LUMBAR: [&str; 5] = ["L1", "L2", "L3", "L4", "L5"];

/// Vertebra layout of the spine phantoms. Arch balls sit on a posterior arc
/// at [`ARCH_DISTANCE`], process balls (spinous and both transverse) at
/// [`PROCESS_DISTANCE`], all in the body's axial plane.
pub fn spine_vertebrae(fractured: bool) -> Vec<VertebraTruth> {
    let at = |c: &Point, r: f64, deg: f64| {
        let a = deg.to_radians();
        arr(&(c + crate::Vector::new(r * a.cos(), r * a.sin(), 0.0)))
    };
    (0..5)
        .map(|k| {
            let id = 20 + k as i32;
            let c = Point::new(32.0, 32.0, 12.0 + 22.0 * k as f64);
            let broken = fractured && id == FRACTURED_ID;
            VertebraTruth {
                id,
                name: LUMBAR[k].into(),
                centroid: arr(&c),
                body_radius: if broken { FRACTURED_BODY_RADIUS } else { BODY_RADIUS },
                body_hu: if broken { HU_BODY_FRACTURED } else { HU_BODY },
                arch_centers: [200.0, 223.0, 246.0, 270.0, 294.0, 317.0, 340.0]
                    .iter()
                    .map(|&d| at(&c, ARCH_DISTANCE, d))
                    .collect(),
                process_centers: [0.0, 180.0, 270.0]
                    .iter()
                    .map(|&d| at(&c, PROCESS_DISTANCE, d))
                    .collect(),
                part_radius: PART_RADIUS,
                fractured: broken,
            }
        })
        .collect()
}

fn generate_spine(out: &Path, fractured: bool) -> Result<GroundTruth> {
    let spacing = 0.5;
    let vertebrae = spine_vertebrae(fractured);
    let grid = paint([129, 129, 225], spacing, [0.0; 3], |p| {
        for v in &vertebrae {
            if (p - Point::from(v.centroid)).norm() <= v.body_radius {
                return (v.id, v.body_hu);
            }
            let near = |c: &[f64; 3]| (p - Point::from(*c)).norm() <= v.part_radius;
            if v.arch_centers.iter().any(near) {
                return (v.id, HU_ARCH);
            }
            if v.process_centers.iter().any(near) {
                return (v.id, HU_PROCESS);
            }
        }
        (0, HU_BACKGROUND)
    })?;
    let legend: BTreeMap<i32, String> = vertebrae.iter().map(|v| (v.id, v.name.clone())).collect();
    write_exam(out, &grid, MvolDtype::I16, &legend)?;
    let centroids: BTreeMap<String, [f64; 3]> = vertebrae.iter().map(|v| (v.id.to_string(), v.centroid)).collect();
    write_json(&out.join("centroids.json"), &centroids)?;
    Ok(GroundTruth {
        kind: if fractured {
            PhantomKind::SpineFractured
        } else {
            PhantomKind::SpineHealthy
        },
        seed: 0,
        spacing_mm: spacing,
        bones: Vec::new(),
        dent: None,
        bump: None,
        vertebrae,
        shell_distances_mm: Some([BODY_RADIUS, ARCH_DISTANCE, PROCESS_DISTANCE]),
    })
}

/// Write the phantom `kind` into `out` and return its ground truth (also
/// saved as `ground_truth.json`). Spine phantoms carry no noise and ignore
/// the seed.
pub fn generate(kind: PhantomKind, out: &Path, seed: u64) -> Result<GroundTruth> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let truth = match kind {
        PhantomKind::WristPair => generate_wrist(out, seed)?,
        PhantomKind::SphereDent => generate_sphere_dent(out, seed)?,
        PhantomKind::SpineHealthy => generate_spine(out, false)?,
        PhantomKind::SpineFractured => generate_spine(out, true)?,
    };
    write_json(&out.join("ground_truth.json"), &truth)?;
    Ok(truth)
}

pub fn load_ground_truth(dir: &Path) -> Result<GroundTruth> {
    let path = dir.join("ground_truth.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_names_round_trip() {
        for k in PhantomKind::ALL {
            assert_eq!(k.as_str().parse::<PhantomKind>().unwrap(), k);
        }
        assert!("knee".parse::<PhantomKind>().is_err());
    }

    #[test]
    fn dent_geometry() {
        let b = &wrist_bones()[1];
        let d = dent_on(b);
        let ball = Point::from(d.ball_center);
        // The cut reaches exactly `depth` below the pole.
        assert!(((ball - Point::from(d.center)).norm() - d.ball_radius).abs() < 1e-12);
        assert!(inside_bone(b, &Point::from(d.center)));
    }

    #[test]
    fn sphere_dent_is_deterministic() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate(PhantomKind::SphereDent, a.path(), 7).unwrap();
        generate(PhantomKind::SphereDent, b.path(), 7).unwrap();
        for rel in [
            "baseline/volume.mvol",
            "baseline/volume.labels.mvol",
            "followup/volume.mvol",
            "followup/meshes/bone_1.ply",
            "ground_truth.json",
        ] {
            assert_eq!(
                fs::read(a.path().join(rel)).unwrap(),
                fs::read(b.path().join(rel)).unwrap(),
                "{rel}"
            );
        }
        let c = tempfile::tempdir().unwrap();
        generate(PhantomKind::SphereDent, c.path(), 8).unwrap();
        assert_ne!(
            fs::read(a.path().join("baseline/volume.mvol")).unwrap(),
            fs::read(c.path().join("baseline/volume.mvol")).unwrap()
        );
    }
}
