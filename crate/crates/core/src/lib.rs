//! Surface morphology and volumetric texture fusion for musculoskeletal
//! follow-up and single-exam analysis.
//!
//! The crate is organised around a handful of data types:
//! [`volume::VoxelGrid`] for CT/MRI volumes and label masks,
//! [`mesh::TriangleMesh`] for bone surfaces carrying named per-vertex
//! channels, and the analysis modules that produce those channels:
//! [`registration`] (rigid ICP, Hausdorff and distance fields),
//! [`texture`] (grey-level mapping), [`fusion`] and [`spine`].
//! [`pipeline`] wires everything into the `morphofuse` command line tool.

// `!(a < b)` is used on purpose so NaN parameters fail validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fusion;
pub mod mesh;
pub mod phantom;
pub mod pipeline;
pub mod registration;
pub mod spatial;
pub mod spine;
pub mod texture;
pub mod volume;

pub use error::{Error, Result};

/// World-space position in millimetres.
pub type Point = nalgebra::Point3<f64>;
/// World-space offset in millimetres.
pub type Vector = nalgebra::Vector3<f64>;

/// Squared Euclidean distance, evaluated in a fixed operation order so that
/// accelerated and exhaustive searches produce bit-identical results.
#[inline]
pub fn dist2(a: &Point, b: &Point) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}
