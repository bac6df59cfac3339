//! Grey-level mapping from a volume onto surface vertices.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{channel, ChannelRange, ScalarField, TriangleMesh};
use crate::volume::VoxelGrid;
use crate::{dist2, Point};

/// Which voxels may supply a vertex's grey level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriterionKind {
    /// Any voxel.
    Euclidean,
    /// Voxels inside the bone.
    Internal,
    /// Voxels outside the bone.
    External,
}

impl CriterionKind {
    pub const ALL: [CriterionKind; 3] = [
        CriterionKind::Euclidean,
        CriterionKind::Internal,
        CriterionKind::External,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CriterionKind::Euclidean => "euclidean",
            CriterionKind::Internal => "internal",
            CriterionKind::External => "external",
        }
    }

    fn admits(self, side: Side) -> bool {
        match self {
            CriterionKind::Euclidean => true,
            CriterionKind::Internal => side == Side::Inside,
            CriterionKind::External => side == Side::Outside,
        }
    }
}

impl fmt::Display for CriterionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CriterionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(CriterionKind::Euclidean),
            "internal" => Ok(CriterionKind::Internal),
            "external" => Ok(CriterionKind::External),
            other => Err(Error::InvalidParameter(format!("unknown mapping criterion '{other}'"))),
        }
    }
}

pub const DEFAULT_SEARCH_RADIUS: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MappingCriterion {
    pub kind: CriterionKind,
    /// Candidates farther than this (mm) are ignored.
    pub max_search_radius: f64,
}

impl MappingCriterion {
    pub fn new(kind: CriterionKind, max_search_radius: f64) -> Result<Self> {
        if !(max_search_radius > 0.0) || max_search_radius.is_infinite() {
            return Err(Error::InvalidParameter(format!(
                "search radius must be positive and finite, got {max_search_radius}"
            )));
        }
        Ok(Self {
            kind,
            max_search_radius,
        })
    }

    pub fn with_default_radius(kind: CriterionKind) -> Self {
        Self {
            kind,
            max_search_radius: DEFAULT_SEARCH_RADIUS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Inside,
    Outside,
}

/// Inside iff the voxel carries `bone_label` in the mask.
pub fn classify_voxel_side(grid: &VoxelGrid, bone_label: i32) -> Result<Vec<Side>> {
    let labels = grid.labels().ok_or(Error::MissingMask)?;
    Ok(labels
        .iter()
        .map(|&l| if l == bone_label { Side::Inside } else { Side::Outside })
        .collect())
}

/// Grey levels mapped onto one mesh.
#[derive(Debug, Clone)]
pub struct SurfaceTexture {
    pub criterion: MappingCriterion,
    /// Channel `tex_<criterion>`; NaN where no candidate was found.
    pub values: ScalarField,
    pub unmapped_count: usize,
    /// Vertices lying outside the grid extent (mapped if a candidate is near).
    pub outside_grid_count: usize,
}

impl SurfaceTexture {
    pub fn mapped_mean(&self) -> Option<f64> {
        mean_finite(self.values.values().iter().copied())
    }
}

fn mean_finite(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values
        .filter(|v| !v.is_nan())
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Map grey levels under `criterion`, taking sides from the mask of `grid`.
pub fn map_grey_levels(
    mesh: &TriangleMesh,
    grid: &VoxelGrid,
    criterion: &MappingCriterion,
    bone_label: i32,
) -> Result<SurfaceTexture> {
    let sides = match criterion.kind {
        CriterionKind::Euclidean => None,
        _ => Some(classify_voxel_side(grid, bone_label)?),
    };
    map_grey_levels_with_sides(mesh, grid, criterion, sides.as_deref())
}

/// Map grey levels with an explicit per-voxel side assignment (needed when
/// the sides come from another exam's mask). `sides` may be `None` only for
/// the Euclidean criterion.
pub fn map_grey_levels_with_sides(
    mesh: &TriangleMesh,
    grid: &VoxelGrid,
    criterion: &MappingCriterion,
    sides: Option<&[Side]>,
) -> Result<SurfaceTexture> {
    if let Some(s) = sides {
        if s.len() != grid.len() {
            return Err(Error::LengthMismatch {
                left: s.len(),
                right: grid.len(),
            });
        }
    } else if criterion.kind != CriterionKind::Euclidean {
        return Err(Error::MissingMask);
    }
    let admissible = |linear: usize| sides.is_none_or(|s| criterion.kind.admits(s[linear]));
    if !(0..grid.len()).any(admissible) {
        return Err(Error::EmptyCandidates(criterion.kind.to_string()));
    }

    let lookups: Vec<(Option<usize>, bool)> = mesh
        .vertices()
        .par_iter()
        .map(|p| {
            let inside_extent = grid.world_to_index(p).index().is_some();
            (
                nearest_candidate(grid, p, criterion.max_search_radius, admissible),
                !inside_extent,
            )
        })
        .collect();
    let values: Vec<f64> = lookups
        .iter()
        .map(|(hit, _)| hit.map_or(f64::NAN, |i| grid.intensities()[i]))
        .collect();
    let unmapped_count = lookups.iter().filter(|(hit, _)| hit.is_none()).count();
    let outside_grid_count = lookups.iter().filter(|(_, out)| *out).count();
    let range = if values.iter().all(|v| ChannelRange::Unit.admits(*v)) {
        ChannelRange::Unit
    } else {
        ChannelRange::Unbounded
    };
    Ok(SurfaceTexture {
        criterion: *criterion,
        values: ScalarField::new(channel::texture(criterion.kind.as_str()), values, range)?,
        unmapped_count,
        outside_grid_count,
    })
}

/// Nearest admissible voxel center within `radius` of `p`. Equidistant
/// candidates resolve to the lexicographically smallest (x, y, z) index.
///
/// Voxels are visited in Chebyshev shells around the voxel whose center is
/// nearest to `p`. Any voxel in shell `k` or beyond is at least
/// `min_a spacing_a * (k - |c_a - base_a|)` away, which bounds the search.
pub fn nearest_candidate(
    grid: &VoxelGrid,
    p: &Point,
    radius: f64,
    admissible: impl Fn(usize) -> bool,
) -> Option<usize> {
    let dims = grid.dims().map(|d| d as i64);
    let spacing = grid.spacing();
    let c = grid.continuous_index(p);
    if c.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let base: [i64; 3] = c.map(|v| (v + 0.5).floor() as i64);
    let offset: [f64; 3] = std::array::from_fn(|a| (c[a] - base[a] as f64).abs());
    let r2 = radius * radius;
    // Beyond this shell no voxel of the grid remains.
    let max_shell = (0..3)
        .map(|a| base[a].abs().max((dims[a] - 1 - base[a]).abs()))
        .max()
        .unwrap_or(0);

    let mut best: Option<(f64, [i64; 3], usize)> = None;
    for k in 0..=max_shell {
        let bound = (0..3)
            .map(|a| spacing[a] * (k as f64 - offset[a]))
            .fold(f64::INFINITY, f64::min)
            .max(0.0)
            * (1.0 - 1e-9);
        let bound2 = bound * bound;
        if bound2 > r2 {
            break;
        }
        if let Some((d, _, _)) = best {
            if bound2 > d {
                break;
            }
        }
        let lo: [i64; 3] = std::array::from_fn(|a| (base[a] - k).max(0));
        let hi: [i64; 3] = std::array::from_fn(|a| (base[a] + k).min(dims[a] - 1));
        if (0..3).any(|a| lo[a] > hi[a]) {
            continue;
        }
        let mut visit = |idx: [i64; 3]| {
            let uidx = idx.map(|v| v as usize);
            let linear = grid.linear_index(uidx);
            if !admissible(linear) {
                return;
            }
            let d = dist2(p, &grid.center_of(uidx));
            if d > r2 {
                return;
            }
            let better = match best {
                None => true,
                Some((bd, bi, _)) => d < bd || (d == bd && idx < bi),
            };
            if better {
                best = Some((d, idx, linear));
            }
        };
        for z in lo[2]..=hi[2] {
            for y in lo[1]..=hi[1] {
                if (z - base[2]).abs() == k || (y - base[1]).abs() == k {
                    for x in lo[0]..=hi[0] {
                        visit([x, y, z]);
                    }
                } else {
                    // Rows through the shell interior touch it only at both ends.
                    for x in [base[0] - k, base[0] + k] {
                        if x >= lo[0] && x <= hi[0] {
                            visit([x, y, z]);
                        }
                    }
                }
            }
        }
    }
    best.map(|(_, _, linear)| linear)
}

/// Per-vertex `baseline - followup` of two textures on the same mesh. The
/// result is channel `d1` in [-1, 1]; NaN in either input stays NaN.
pub fn texture_difference(baseline: &SurfaceTexture, followup: &SurfaceTexture) -> Result<ScalarField> {
    if baseline.criterion.kind != followup.criterion.kind {
        return Err(Error::CriterionMismatch {
            left: baseline.criterion.kind.to_string(),
            right: followup.criterion.kind.to_string(),
        });
    }
    texture_difference_values(baseline.values.values(), followup.values.values())
}

/// [`texture_difference`] on raw value slices, each required in [0, 1].
pub fn texture_difference_values(baseline: &[f64], followup: &[f64]) -> Result<ScalarField> {
    if baseline.len() != followup.len() {
        return Err(Error::LengthMismatch {
            left: baseline.len(),
            right: followup.len(),
        });
    }
    for (name, values) in [("baseline texture", baseline), ("follow-up texture", followup)] {
        if let Some(v) = values.iter().find(|v| !ChannelRange::Unit.admits(**v)) {
            return Err(Error::InvalidField {
                name: name.into(),
                reason: format!("value {v} is not normalised to [0,1]"),
            });
        }
    }
    let d1 = baseline.iter().zip(followup).map(|(b, f)| b - f).collect();
    ScalarField::new(channel::D1, d1, ChannelRange::Signed)
}

/// Functional region ids used for vertebrae.
pub const REGIONS: [u8; 3] = [0, 1, 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMean {
    pub region: u8,
    /// `None` when the region has no mapped vertex.
    pub mean: Option<f64>,
    /// Mapped vertices contributing to the mean.
    pub vertex_count: usize,
}

/// Mean mapped value per region label (0, 1, 2), skipping unmapped vertices.
pub fn region_mean_intensity(texture: &ScalarField, regions: &ScalarField) -> Result<Vec<RegionMean>> {
    if texture.len() != regions.len() {
        return Err(Error::LengthMismatch {
            left: texture.len(),
            right: regions.len(),
        });
    }
    if let Some(v) = regions.values().iter().find(|v| !matches!(**v, 0.0 | 1.0 | 2.0)) {
        return Err(Error::InvalidField {
            name: regions.name().into(),
            reason: format!("region label {v} not in {{0,1,2}}"),
        });
    }
    Ok(REGIONS
        .iter()
        .map(|&r| {
            let members = texture
                .values()
                .iter()
                .zip(regions.values())
                .filter(|(v, &l)| l == r as f64 && !v.is_nan())
                .map(|(v, _)| *v);
            let vertex_count = members.clone().count();
            RegionMean {
                region: r,
                mean: mean_finite(members),
                vertex_count,
            }
        })
        .collect())
}

pub const HISTOGRAM_BINS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

/// 64-bin histogram of the mapped values over the declared range, or the
/// data extent for unbounded channels. The last bin is closed.
pub fn histogram(field: &ScalarField) -> Histogram {
    let (lo, hi) = field
        .range()
        .bounds()
        .or_else(|| field.finite_extent())
        .unwrap_or((0.0, 1.0));
    let mut counts = vec![0; HISTOGRAM_BINS];
    for &v in field.values().iter().filter(|v| v.is_finite()) {
        let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
        let bin = ((t * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
        counts[bin] += 1;
    }
    Histogram { lo, hi, counts }
}

/// Per-bone texture summary written to `texture_<id>_<criterion>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextureReport {
    pub bone_id: i32,
    pub criterion: CriterionKind,
    pub max_search_radius_mm: f64,
    /// Which exam's image was sampled ("baseline" or "followup").
    pub source: String,
    pub unmapped_count: usize,
    pub outside_grid_count: usize,
    pub mean: Option<f64>,
    pub region_means: Vec<RegionMean>,
    pub histogram: Histogram,
}

impl TextureReport {
    pub fn new(bone_id: i32, source: &str, texture: &SurfaceTexture, regions: Option<&ScalarField>) -> Result<Self> {
        Ok(Self {
            bone_id,
            criterion: texture.criterion.kind,
            max_search_radius_mm: texture.criterion.max_search_radius,
            source: source.to_string(),
            unmapped_count: texture.unmapped_count,
            outside_grid_count: texture.outside_grid_count,
            mean: texture.mapped_mean(),
            region_means: match regions {
                Some(r) => region_mean_intensity(&texture.values, r)?,
                None => Vec::new(),
            },
            histogram: histogram(&texture.values),
        })
    }
}
