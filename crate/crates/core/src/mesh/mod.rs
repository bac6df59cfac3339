//! Indexed triangle surfaces with named per-vertex scalar channels.

mod colormap;
mod io;
mod marching_cubes;
mod tables;

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{Point, Vector};

pub use colormap::Colormap;
pub use io::{load_mesh, save_colored_mesh, save_mesh, MeshFormat};
pub use marching_cubes::extract_isosurface;

/// Channel names shared by the pipeline, the exported bundles and the viewer.
pub mod channel {
    pub const D1: &str = "d1";
    pub const D2: &str = "d2";
    pub const D2_MM: &str = "d2_mm";
    pub const FUSED: &str = "fused";
    pub const REGION: &str = "region";
    pub const CENTROID_DISTANCE: &str = "centroid_dist";
    pub const QUALITY: &str = "quality";

    /// `fused_eps_<epsilon>` using the shortest decimal form of epsilon.
    pub fn fused_eps(epsilon: f64) -> String {
        format!("fused_eps_{epsilon}")
    }

    pub fn texture(criterion: &str) -> String {
        format!("tex_{criterion}")
    }
}

/// Value domain a scalar channel declares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelRange {
    #[serde(rename = "[0,1]")]
    Unit,
    #[serde(rename = "[-1,1]")]
    Signed,
    #[serde(rename = "unbounded")]
    Unbounded,
    #[serde(rename = "label")]
    Label,
}

impl ChannelRange {
    pub fn as_str(self) -> &'static str {
        match self {
            ChannelRange::Unit => "[0,1]",
            ChannelRange::Signed => "[-1,1]",
            ChannelRange::Unbounded => "unbounded",
            ChannelRange::Label => "label",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "[0,1]" => Some(ChannelRange::Unit),
            "[-1,1]" => Some(ChannelRange::Signed),
            "unbounded" => Some(ChannelRange::Unbounded),
            "label" => Some(ChannelRange::Label),
            _ => None,
        }
    }

    /// Fixed bounds, if the range has them.
    pub fn bounds(self) -> Option<(f64, f64)> {
        match self {
            ChannelRange::Unit => Some((0.0, 1.0)),
            ChannelRange::Signed => Some((-1.0, 1.0)),
            _ => None,
        }
    }

    /// NaN is the unmapped sentinel and is accepted everywhere.
    pub fn admits(self, v: f64) -> bool {
        if v.is_nan() {
            return true;
        }
        match self {
            ChannelRange::Unit => (0.0..=1.0).contains(&v),
            ChannelRange::Signed => (-1.0..=1.0).contains(&v),
            ChannelRange::Unbounded => v.is_finite(),
            ChannelRange::Label => v.is_finite() && v.fract() == 0.0,
        }
    }
}

impl fmt::Display for ChannelRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A named per-vertex scalar channel. `NaN` marks vertices without a value.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    name: String,
    values: Vec<f64>,
    range: ChannelRange,
}

impl ScalarField {
    pub fn new(name: impl Into<String>, values: Vec<f64>, range: ChannelRange) -> Result<Self> {
        let name = name.into();
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !range.admits(**v)) {
            return Err(Error::InvalidField {
                name,
                reason: format!("value {v} at vertex {i} outside declared range {range}"),
            });
        }
        Ok(Self { name, values, range })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn range(&self) -> ChannelRange {
        self.range
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Min and max over non-NaN values.
    pub fn finite_extent(&self) -> Option<(f64, f64)> {
        self.values
            .iter()
            .filter(|v| !v.is_nan())
            .fold(None, |acc, &v| match acc {
                None => Some((v, v)),
                Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
            })
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Triangle surface in world millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    channels: BTreeMap<String, ScalarField>,
    pub bone_id: Option<i32>,
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Point>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        for (f, tri) in triangles.iter().enumerate() {
            if let Some(&index) = tri.iter().find(|&&i| i >= vertices.len()) {
                return Err(Error::FaceIndexOutOfRange {
                    face: f,
                    index,
                    vertex_count: vertices.len(),
                });
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::DegenerateTriangle(f));
            }
        }
        Ok(Self {
            vertices,
            triangles,
            channels: BTreeMap::new(),
            bone_id: None,
        })
    }

    pub fn with_bone_id(mut self, id: i32) -> Self {
        self.bone_id = Some(id);
        self
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn channels(&self) -> impl Iterator<Item = &ScalarField> {
        self.channels.values()
    }

    pub fn channel_names(&self) -> Vec<String> {
        self.channels.keys().cloned().collect()
    }

    pub fn has_channel(&self, name: &str) -> bool {
        self.channels.contains_key(name)
    }

    pub fn channel(&self, name: &str) -> Result<&ScalarField> {
        self.channels
            .get(name)
            .ok_or_else(|| Error::UnknownChannel(name.to_string()))
    }

    /// Insert or replace a channel.
    pub fn set_channel(&mut self, field: ScalarField) -> Result<()> {
        if field.len() != self.vertices.len() {
            return Err(Error::LengthMismatch {
                left: field.len(),
                right: self.vertices.len(),
            });
        }
        self.channels.insert(field.name.clone(), field);
        Ok(())
    }

    pub fn remove_channel(&mut self, name: &str) -> Option<ScalarField> {
        self.channels.remove(name)
    }

    /// Copy of the mesh with every vertex mapped through `f`; channels are kept.
    pub fn map_vertices(&self, f: impl FnMut(&Point) -> Point) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.iter().map(f).collect(),
            ..self.clone()
        }
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i]);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Enclosed volume by the divergence theorem; positive for outward winding.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i].coords);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    /// Reverse the winding of every triangle.
    pub fn flip_orientation(&mut self) {
        for t in &mut self.triangles {
            t.swap(1, 2);
        }
    }

    pub fn unique_edges(&self) -> HashSet<(usize, usize)> {
        let mut edges = HashSet::with_capacity(self.triangles.len() * 3 / 2);
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                edges.insert((a.min(b), a.max(b)));
            }
        }
        edges
    }

    /// V - E + F.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.unique_edges().len() as i64 + self.triangles.len() as i64
    }

    /// Axis-aligned bounds of the vertex set.
    pub fn bounding_box(&self) -> Option<(Point, Point)> {
        let first = *self.vertices.first()?;
        Some(
            self.vertices
                .iter()
                .fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p))),
        )
    }
}

/// Area-weighted surface centroid. Meshes without any area fall back to the
/// vertex mean.
pub fn mesh_centroid(mesh: &TriangleMesh) -> Result<Point> {
    if mesh.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let mut weighted = Vector::zeros();
    let mut total = 0.0;
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let area = mesh.triangle_area(t);
        let [a, b, c] = tri.map(|i| mesh.vertices()[i].coords);
        weighted += (a + b + c) * (area / 3.0);
        total += area;
    }
    if total > 0.0 {
        return Ok(Point::from(weighted / total));
    }
    let sum: Vector = mesh.vertices().iter().map(|p| p.coords).sum();
    Ok(Point::from(sum / mesh.vertex_count() as f64))
}

/// Closed axis-aligned box surface, 8 vertices and 12 outward-wound triangles.
pub fn box_mesh(min: Point, max: Point) -> TriangleMesh {
    let v = |x: bool, y: bool, z: bool| {
        Point::new(
            if x { max.x } else { min.x },
            if y { max.y } else { min.y },
            if z { max.z } else { min.z },
        )
    };
    let vertices = vec![
        v(false, false, false),
        v(true, false, false),
        v(true, true, false),
        v(false, true, false),
        v(false, false, true),
        v(true, false, true),
        v(true, true, true),
        v(false, true, true),
    ];
    let triangles = vec![
        [0, 2, 1],
        [0, 3, 2],
        [4, 5, 6],
        [4, 6, 7],
        [0, 1, 5],
        [0, 5, 4],
        [1, 2, 6],
        [1, 6, 5],
        [2, 3, 7],
        [2, 7, 6],
        [3, 0, 4],
        [3, 4, 7],
    ];
    TriangleMesh::new(vertices, triangles).expect("static box topology is valid")
}

/// Icosphere obtained by `subdivisions` rounds of 4:1 splitting, outward wound.
pub fn icosphere(center: Point, radius: f64, subdivisions: usize) -> TriangleMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vector> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vector::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoints = std::collections::HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut mid = |a: usize, b: usize, verts: &mut Vec<Vector>| -> usize {
            *midpoints.entry((a.min(b), a.max(b))).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut verts);
            let bc = mid(b, c, &mut verts);
            let ca = mid(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let vertices = verts.into_iter().map(|v| center + v * radius).collect();
    TriangleMesh::new(vertices, faces).expect("icosphere topology is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rejects_bad_faces() {
        let v = vec![Point::origin(); 4];
        assert!(matches!(
            TriangleMesh::new(v.clone(), vec![[0, 1, 9]]),
            Err(Error::FaceIndexOutOfRange { index: 9, .. })
        ));
        assert!(matches!(
            TriangleMesh::new(v, vec![[0, 1, 1]]),
            Err(Error::DegenerateTriangle(0))
        ));
    }

    #[test]
    fn channel_length_and_range_checked() {
        let mut m = box_mesh(Point::origin(), Point::new(1.0, 1.0, 1.0));
        assert!(m
            .set_channel(ScalarField::new("d2", vec![0.5; 7], ChannelRange::Unit).unwrap())
            .is_err());
        assert!(ScalarField::new("d2", vec![1.5], ChannelRange::Unit).is_err());
        assert!(ScalarField::new("d1", vec![-1.0, f64::NAN, 1.0], ChannelRange::Signed).is_ok());
        assert!(ScalarField::new("region", vec![0.0, 1.5], ChannelRange::Label).is_err());
        m.set_channel(ScalarField::new("d2", vec![0.5; 8], ChannelRange::Unit).unwrap())
            .unwrap();
        assert_eq!(m.channel("d2").unwrap().len(), 8);
        assert!(matches!(m.channel("d1"), Err(Error::UnknownChannel(_))));
    }

    #[test]
    fn cube_centroid_and_volume() {
        let cube = box_mesh(Point::origin(), Point::new(1.0, 1.0, 1.0));
        assert_relative_eq!(
            mesh_centroid(&cube).unwrap(),
            Point::new(0.5, 0.5, 0.5),
            epsilon = 1e-15
        );
        assert_relative_eq!(cube.signed_volume(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(cube.surface_area(), 6.0, epsilon = 1e-15);
        assert_eq!(cube.euler_characteristic(), 2);

        let shifted = cube.map_vertices(|p| p + Vector::new(10.0, 0.0, 0.0));
        let c0 = mesh_centroid(&cube).unwrap();
        let c1 = mesh_centroid(&shifted).unwrap();
        assert_eq!(c1 - c0, Vector::new(10.0, 0.0, 0.0));
    }

    #[test]
    fn sphere_centroid_at_center() {
        let center = Point::new(3.0, -2.0, 7.5);
        let s = icosphere(center, 10.0, 3);
        let c = mesh_centroid(&s).unwrap();
        assert!((c - center).norm() <= 1e-6 * 10.0);
        assert_eq!(s.euler_characteristic(), 2);
        assert!(s.signed_volume() > 0.0);
    }

    #[test]
    fn centroid_is_rigid_equivariant() {
        let mesh = icosphere(Point::new(1.0, 2.0, 3.0), 4.0, 2)
            .map_vertices(|p| Point::new(p.x * 2.0, p.y, p.z * 0.5 + p.x * 0.1));
        let rot = nalgebra::Rotation3::from_euler_angles(0.3, -0.2, 1.1);
        let shift = Vector::new(5.0, -3.0, 0.25);
        let moved = mesh.map_vertices(|p| rot * p + shift);
        let expected = rot * mesh_centroid(&mesh).unwrap() + shift;
        assert_relative_eq!(mesh_centroid(&moved).unwrap(), expected, epsilon = 1e-9);
    }

    #[test]
    fn empty_mesh_has_no_centroid() {
        let m = TriangleMesh::new(vec![], vec![]).unwrap();
        assert!(matches!(mesh_centroid(&m), Err(Error::EmptyMesh)));
    }

    #[test]
    fn fused_eps_names() {
        assert_eq!(channel::fused_eps(1.0), "fused_eps_1");
        assert_eq!(channel::fused_eps(0.5), "fused_eps_0.5");
        assert_eq!(channel::fused_eps(0.2), "fused_eps_0.2");
    }
}
