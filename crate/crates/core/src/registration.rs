//! Rigid co-registration of bone surfaces and vertex distance measures.

use nalgebra::{Matrix3, Rotation3, Unit};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{channel, ChannelRange, ScalarField, TriangleMesh};
use crate::spatial::KdTree;
use crate::{Point, Vector};

/// Distance ranges at or below this (mm) are treated as constant fields.
pub const DEGENERATE_RANGE_TOL: f64 = 1e-9;

/// Proper rigid motion `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector::zeros(),
        }
    }

    /// Fails unless `rotation` is orthonormal with determinant +1 (1e-9).
    pub fn new(rotation: Matrix3<f64>, translation: Vector) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if !(ortho <= 1e-9 && (det - 1.0).abs() <= 1e-9) || !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "not a proper rigid transform (orthogonality error {ortho:e}, det {det})"
            )));
        }
        Ok(Self { rotation, translation })
    }

    pub fn from_axis_angle(axis: Vector, angle: f64, translation: Vector) -> Self {
        let rotation = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle);
        Self {
            rotation: *rotation.matrix(),
            translation,
        }
    }

    pub fn translation_only(translation: Vector) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector {
        &self.translation
    }

    pub fn apply(&self, p: &Point) -> Point {
        Point::from(self.rotation * p.coords + self.translation)
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self` applied after `first`.
    pub fn compose(&self, first: &RigidTransform) -> Self {
        Self {
            rotation: self.rotation * first.rotation,
            translation: self.rotation * first.translation + self.translation,
        }
    }

    /// Angle (rad) of the relative rotation between two transforms.
    pub fn rotation_angle_to(&self, other: &RigidTransform) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        let c = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        // acos is ill-conditioned near zero; use the skew part there.
        let s = Vector::new(
            rel[(2, 1)] - rel[(1, 2)],
            rel[(0, 2)] - rel[(2, 0)],
            rel[(1, 0)] - rel[(0, 1)],
        )
        .norm()
            / 2.0;
        s.atan2(c)
    }

    pub fn transform_mesh(&self, mesh: &TriangleMesh) -> TriangleMesh {
        mesh.map_vertices(|p| self.apply(p))
    }

    pub fn to_record(&self) -> TransformRecord {
        let r = &self.rotation;
        TransformRecord {
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            translation: [self.translation.x, self.translation.y, self.translation.z],
        }
    }

    pub fn from_record(record: &TransformRecord) -> Result<Self> {
        let r = Matrix3::from_row_slice(&record.rotation);
        Self::new(r, Vector::from(record.translation))
    }
}

/// Row-major rotation and translation, as serialised in reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformRecord {
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpParams {
    /// Stop once the relative RMS improvement falls below this.
    pub tol: f64,
    pub max_iters: usize,
    /// Drop the worst 10% of correspondences in every solve.
    pub trim: bool,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iters: 100,
            trim: false,
        }
    }
}

const TRIM_FRACTION: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct IcpResult {
    pub transform: RigidTransform,
    /// Number of accepted rigid solves.
    pub iterations: usize,
    pub final_rms: f64,
    pub converged: bool,
    /// RMS correspondence distance of every accepted iterate, starting with
    /// the centroid-aligned initial pose.
    pub history: Vec<f64>,
}

fn vertex_mean(points: &[Point]) -> Point {
    let sum: Vector = points.iter().map(|p| p.coords).sum();
    Point::from(sum / points.len() as f64)
}

fn check_not_collinear(points: &[Point]) -> Result<()> {
    let c = vertex_mean(points);
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    let mut s: Vec<f64> = cov.symmetric_eigenvalues().iter().map(|v| v.abs()).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    if s[0] == 0.0 || s[1] <= 1e-12 * s[0] {
        return Err(Error::DegenerateSource(
            "source vertices are collinear or coincident".into(),
        ));
    }
    Ok(())
}

/// Least-squares proper rotation and translation taking `src[i]` to `dst[i]`.
pub fn kabsch(src: &[Point], dst: &[Point]) -> RigidTransform {
    let ps = vertex_mean(src);
    let pd = vertex_mean(dst);
    let mut h = Matrix3::zeros();
    for (a, b) in src.iter().zip(dst) {
        h += (a - ps) * (b - pd).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.expect("requested U");
    let v = svd.v_t.expect("requested V^T").transpose();
    let d = (v * u.transpose()).determinant().signum();
    let rotation = v * Matrix3::from_diagonal(&Vector::new(1.0, 1.0, d)) * u.transpose();
    let translation = pd.coords - rotation * ps.coords;
    RigidTransform { rotation, translation }
}

struct Matches {
    rms: f64,
    src: Vec<Point>,
    dst: Vec<Point>,
}

fn correspond(source: &[Point], tree: &KdTree, transform: &RigidTransform, trim: bool) -> Matches {
    let found: Vec<(usize, f64)> = source
        .par_iter()
        .map(|p| tree.nearest(&transform.apply(p)).expect("target is non-empty"))
        .collect();
    let mut keep: Vec<usize> = (0..source.len()).collect();
    if trim {
        keep.sort_by(|&a, &b| found[a].1.total_cmp(&found[b].1).then(a.cmp(&b)));
        let n = ((source.len() as f64) * (1.0 - TRIM_FRACTION)).ceil().max(3.0) as usize;
        keep.truncate(n.min(source.len()));
        keep.sort_unstable();
    }
    let sum: f64 = keep.iter().map(|&i| found[i].1).sum();
    Matches {
        rms: (sum / keep.len() as f64).sqrt(),
        src: keep.iter().map(|&i| source[i]).collect(),
        dst: keep.iter().map(|&i| tree.points()[found[i].0]).collect(),
    }
}

/// Point-to-point ICP aligning `source` onto `target`.
///
/// Starts from the translation matching vertex centroids. Each iteration
/// pairs every source vertex with its nearest target vertex and solves the
/// rigid motion in closed form from the untransformed source. An iterate that
/// would raise the RMS (possible only through rounding or trimming) is
/// rejected and the run ends as converged at the previous iterate.
pub fn rigid_icp(source: &TriangleMesh, target: &TriangleMesh, params: &IcpParams) -> Result<IcpResult> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyMesh);
    }
    if !(params.tol >= 0.0) {
        return Err(Error::InvalidParameter(format!("ICP tolerance {}", params.tol)));
    }
    let src = source.vertices();
    check_not_collinear(src)?;
    let tree = KdTree::new(target.vertices());

    let mut transform = RigidTransform::translation_only(vertex_mean(target.vertices()) - vertex_mean(src));
    let mut matches = correspond(src, &tree, &transform, params.trim);
    let mut history = vec![matches.rms];
    let mut iterations = 0;
    let mut converged = false;
    for iter in 1..=params.max_iters {
        if matches.rms == 0.0 {
            converged = true;
            break;
        }
        let candidate = kabsch(&matches.src, &matches.dst);
        let next = correspond(src, &tree, &candidate, params.trim);
        if next.rms > matches.rms {
            converged = true;
            break;
        }
        let rel = (matches.rms - next.rms) / matches.rms;
        transform = candidate;
        matches = next;
        history.push(matches.rms);
        iterations = iter;
        if rel < params.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!(
            "ICP did not converge in {} iterations (rms {:.6} mm)",
            params.max_iters,
            matches.rms
        );
    }
    Ok(IcpResult {
        transform,
        iterations,
        final_rms: matches.rms,
        converged,
        history,
    })
}

/// For every point of `from`, the distance to the nearest vertex in `to`.
pub fn directed_distances(from: &[Point], to: &KdTree) -> Vec<f64> {
    from.par_iter()
        .map(|p| to.nearest(p).map_or(f64::NAN, |(_, d2)| d2.sqrt()))
        .collect()
}

fn max_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(0.0, f64::max)
}

/// How the distance from a point to the other surface is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    /// Nearest vertex of the other surface.
    #[default]
    Vertex,
    /// Nearest point on any triangle of the other surface.
    PointToTriangle,
}

/// Closest point to `p` on triangle `abc`, by Voronoi region.
pub fn closest_point_on_triangle(p: &Point, a: &Point, b: &Point, c: &Point) -> Point {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && d4 - d3 >= 0.0 && d5 - d6 >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = va + vb + vc;
    a + ab * (vb / denom) + ac * (vc / denom)
}

/// A triangle mesh indexed for exact point-to-triangle queries.
///
/// Any point of a triangle lies within its longest edge of each of its
/// corners, so only triangles around vertices within `nearest vertex +
/// longest edge` of the query can hold the closest point.
struct TriangleIndex<'a> {
    mesh: &'a TriangleMesh,
    tree: KdTree,
    /// Mesh vertex index of each tree point.
    tree_vertex: Vec<usize>,
    incident: Vec<Vec<usize>>,
    max_edge: f64,
}

impl<'a> TriangleIndex<'a> {
    fn new(mesh: &'a TriangleMesh) -> Self {
        let mut incident = vec![Vec::new(); mesh.vertex_count()];
        let mut max_edge: f64 = 0.0;
        let v = mesh.vertices();
        for (t, tri) in mesh.triangles().iter().enumerate() {
            for k in 0..3 {
                incident[tri[k]].push(t);
                max_edge = max_edge.max((v[tri[k]] - v[tri[(k + 1) % 3]]).norm());
            }
        }
        // Only vertices on some triangle bound the search.
        let tree_vertex: Vec<usize> = (0..v.len()).filter(|&i| !incident[i].is_empty()).collect();
        let points: Vec<Point> = tree_vertex.iter().map(|&i| v[i]).collect();
        Self {
            mesh,
            tree: KdTree::new(&points),
            tree_vertex,
            incident,
            max_edge,
        }
    }

    fn distance(&self, p: &Point) -> f64 {
        let Some((_, d2)) = self.tree.nearest(p) else {
            return f64::NAN;
        };
        let reach = (d2.sqrt() + self.max_edge) * (1.0 + 1e-12) + 1e-12;
        let mut seen: Vec<usize> = self
            .tree
            .within(p, reach * reach)
            .into_iter()
            .flat_map(|i| self.incident[self.tree_vertex[i]].iter().copied())
            .collect();
        seen.sort_unstable();
        seen.dedup();
        let v = self.mesh.vertices();
        seen.into_iter()
            .map(|t| {
                let [a, b, c] = self.mesh.triangles()[t];
                (p - closest_point_on_triangle(p, &v[a], &v[b], &v[c])).norm()
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// For every point of `from`, the distance to the surface `to`. A mesh
/// without triangles falls back to vertex distances.
pub fn surface_distances(from: &[Point], to: &TriangleMesh, metric: DistanceMetric) -> Vec<f64> {
    if metric == DistanceMetric::Vertex || to.triangles().is_empty() {
        return directed_distances(from, &KdTree::new(to.vertices()));
    }
    let index = TriangleIndex::new(to);
    from.par_iter().map(|p| index.distance(p)).collect()
}

/// Directed vertex-set distance: max over `x` in `a` of min over `y` in `b`.
pub fn directed_hausdorff(a: &TriangleMesh, b: &TriangleMesh) -> Result<f64> {
    directed_hausdorff_with(a, b, DistanceMetric::Vertex)
}

pub fn directed_hausdorff_with(a: &TriangleMesh, b: &TriangleMesh, metric: DistanceMetric) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyMesh);
    }
    Ok(max_of(&surface_distances(a.vertices(), b, metric)))
}

/// Symmetric Hausdorff distance between the two vertex sets.
pub fn hausdorff_distance(x1: &TriangleMesh, x2: &TriangleMesh) -> Result<f64> {
    hausdorff_distance_with(x1, x2, DistanceMetric::Vertex)
}

/// Symmetric Hausdorff distance under `metric`.
pub fn hausdorff_distance_with(x1: &TriangleMesh, x2: &TriangleMesh, metric: DistanceMetric) -> Result<f64> {
    Ok(directed_hausdorff_with(x1, x2, metric)?.max(directed_hausdorff_with(x2, x1, metric)?))
}

/// Per-vertex distances of the follow-up surface to the baseline surface.
#[derive(Debug, Clone)]
pub struct FollowupDistances {
    /// Channel `d2_mm`.
    pub per_vertex_mm: ScalarField,
    pub hausdorff_mm: f64,
    /// Channel `d2`: `per_vertex_mm` min-max scaled to [0,1].
    pub normalized: ScalarField,
    /// Set when every distance is equal and `normalized` is all zeros.
    pub degenerate_range: bool,
}

/// Min-max scaling to [0,1] over `[lo, hi]`. A range no wider than
/// [`DEGENERATE_RANGE_TOL`] maps everything to 0 and reports `true`.
pub fn normalize_min_max(values: &[f64], lo: f64, hi: f64) -> (Vec<f64>, bool) {
    if !(hi - lo > DEGENERATE_RANGE_TOL) {
        let zeros = values.iter().map(|v| if v.is_nan() { f64::NAN } else { 0.0 }).collect();
        return (zeros, true);
    }
    let span = hi - lo;
    let scaled = values.iter().map(|&v| ((v - lo) / span).clamp(0.0, 1.0)).collect();
    (scaled, false)
}

/// Finite min and max, or `None` if there are no finite values.
pub fn finite_range(values: &[f64]) -> Option<(f64, f64)> {
    values.iter().filter(|v| v.is_finite()).fold(None, |acc, &v| match acc {
        None => Some((v, v)),
        Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
    })
}

/// Distance field of `followup` to `baseline`, normalised over this bone.
pub fn vertex_distance_field(followup: &TriangleMesh, baseline: &TriangleMesh) -> Result<FollowupDistances> {
    vertex_distance_field_in(followup, baseline, None)
}

/// As [`vertex_distance_field`], normalising over an externally supplied
/// `(lo, hi)` range (district-wide normalisation).
pub fn vertex_distance_field_in(
    followup: &TriangleMesh,
    baseline: &TriangleMesh,
    range: Option<(f64, f64)>,
) -> Result<FollowupDistances> {
    distance_field(followup, baseline, range, DistanceMetric::Vertex)
}

/// Follow-up to baseline distances under `metric`, with the Hausdorff
/// distance measured the same way.
pub fn distance_field(
    followup: &TriangleMesh,
    baseline: &TriangleMesh,
    range: Option<(f64, f64)>,
    metric: DistanceMetric,
) -> Result<FollowupDistances> {
    if followup.is_empty() || baseline.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let to_baseline = surface_distances(followup.vertices(), baseline, metric);
    let to_followup = surface_distances(baseline.vertices(), followup, metric);
    let hausdorff_mm = max_of(&to_baseline).max(max_of(&to_followup));
    let (lo, hi) = range.or_else(|| finite_range(&to_baseline)).unwrap_or((0.0, 0.0));
    let (scaled, degenerate_range) = normalize_min_max(&to_baseline, lo, hi);
    Ok(FollowupDistances {
        per_vertex_mm: ScalarField::new(channel::D2_MM, to_baseline, ChannelRange::Unbounded)?,
        hausdorff_mm,
        normalized: ScalarField::new(channel::D2, scaled, ChannelRange::Unit)?,
        degenerate_range,
    })
}

/// Per-bone registration summary written to `registration_<id>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationReport {
    pub bone_id: i32,
    pub iterations: usize,
    pub final_rms_mm: f64,
    pub hausdorff_mm: f64,
    pub converged: bool,
    pub transform: TransformRecord,
}
