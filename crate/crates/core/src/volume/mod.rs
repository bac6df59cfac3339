//! Volume images and their segmentation masks.
//!
//! A [`VoxelGrid`] stores intensities in x-fastest order together with the
//! physical geometry of the acquisition. The origin is the world position of
//! the *center* of voxel `(0, 0, 0)`, so voxel `i` is centered at
//! `origin + i * spacing` and each voxel covers half a spacing on either side.

mod mvol;
mod nifti;

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::Point;

pub use mvol::{load_mvol, write_mvol, MvolDtype};
pub use nifti::{load_nifti, write_nifti, NiftiDtype};

/// Supported on-disk volume formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VolumeFormat {
    Mvol,
    Nifti,
}

impl VolumeFormat {
    /// Guess the format from a file extension (`.mvol`, `.nii`).
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("mvol") => Some(VolumeFormat::Mvol),
            Some("nii") => Some(VolumeFormat::Nifti),
            _ => None,
        }
    }
}

/// Result of a world to voxel lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoxelLookup {
    Inside([usize; 3]),
    OutOfBounds,
}

impl VoxelLookup {
    pub fn index(self) -> Option<[usize; 3]> {
        match self {
            VoxelLookup::Inside(i) => Some(i),
            VoxelLookup::OutOfBounds => None,
        }
    }
}

/// 3D scalar image with physical spacing and an optional integer label mask.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    intensities: Vec<f64>,
    labels: Option<Vec<i32>>,
}

impl VoxelGrid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3], intensities: Vec<f64>) -> Result<Self> {
        if spacing.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::NonPositiveSpacing(spacing));
        }
        let expected = dims[0] * dims[1] * dims[2];
        if intensities.len() != expected {
            return Err(Error::SizeMismatch {
                expected,
                found: intensities.len(),
            });
        }
        Ok(Self {
            dims,
            spacing,
            origin,
            intensities,
            labels: None,
        })
    }

    /// Attach a label mask (0 = background, k > 0 = structure id).
    pub fn with_labels(mut self, labels: Vec<i32>) -> Result<Self> {
        if labels.len() != self.intensities.len() {
            return Err(Error::SizeMismatch {
                expected: self.intensities.len(),
                found: labels.len(),
            });
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn without_labels(mut self) -> Self {
        self.labels = None;
        self
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.intensities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intensities.is_empty()
    }

    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }

    pub fn labels(&self) -> Option<&[i32]> {
        self.labels.as_deref()
    }

    #[inline]
    pub fn linear_index(&self, index: [usize; 3]) -> usize {
        index[0] + self.dims[0] * (index[1] + self.dims[1] * index[2])
    }

    #[inline]
    pub fn grid_index(&self, linear: usize) -> [usize; 3] {
        let x = linear % self.dims[0];
        let rest = linear / self.dims[0];
        [x, rest % self.dims[1], rest / self.dims[1]]
    }

    pub fn in_bounds(&self, index: [usize; 3]) -> bool {
        index[0] < self.dims[0] && index[1] < self.dims[1] && index[2] < self.dims[2]
    }

    #[inline]
    pub fn intensity_at(&self, index: [usize; 3]) -> f64 {
        self.intensities[self.linear_index(index)]
    }

    #[inline]
    pub fn label_at(&self, index: [usize; 3]) -> Option<i32> {
        self.labels.as_ref().map(|labels| labels[self.linear_index(index)])
    }

    /// World position of a voxel center, without bounds checking.
    #[inline]
    pub fn center_of(&self, index: [usize; 3]) -> Point {
        Point::new(
            self.origin[0] + index[0] as f64 * self.spacing[0],
            self.origin[1] + index[1] as f64 * self.spacing[1],
            self.origin[2] + index[2] as f64 * self.spacing[2],
        )
    }

    /// World position of a voxel center.
    pub fn voxel_center(&self, index: [usize; 3]) -> Result<Point> {
        if !self.in_bounds(index) {
            return Err(Error::IndexOutOfBounds(index));
        }
        Ok(self.center_of(index))
    }

    /// Continuous voxel coordinates of a world point (voxel centers sit on integers).
    #[inline]
    pub fn continuous_index(&self, point: &Point) -> [f64; 3] {
        [
            (point.x - self.origin[0]) / self.spacing[0],
            (point.y - self.origin[1]) / self.spacing[1],
            (point.z - self.origin[2]) / self.spacing[2],
        ]
    }

    /// Index of the voxel whose cell contains `point`.
    ///
    /// A voxel's cell extends half a spacing around its center, so this is the
    /// nearest voxel center along each axis.
    pub fn world_to_index(&self, point: &Point) -> VoxelLookup {
        let c = self.continuous_index(point);
        let mut out = [0usize; 3];
        for axis in 0..3 {
            let v = (c[axis] + 0.5).floor();
            if !v.is_finite() || v < 0.0 || v >= self.dims[axis] as f64 {
                return VoxelLookup::OutOfBounds;
            }
            out[axis] = v as usize;
        }
        VoxelLookup::Inside(out)
    }

    /// Smallest and largest intensity.
    pub fn intensity_range(&self) -> (f64, f64) {
        self.intensities
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Affine min-max rescale of intensities to `[0, 1]`. Labels are untouched.
    pub fn normalize_intensities(&self) -> Result<VoxelGrid> {
        let (lo, hi) = self.intensity_range();
        let range = hi - lo;
        if !(range > 0.0) {
            return Err(Error::DegenerateRange(lo));
        }
        let intensities = self
            .intensities
            .iter()
            .map(|&v| ((v - lo) / range).clamp(0.0, 1.0))
            .collect();
        Ok(VoxelGrid {
            intensities,
            ..self.clone()
        })
    }

    /// Number of voxels carrying `label`.
    pub fn label_count(&self, label: i32) -> usize {
        self.labels
            .as_ref()
            .map_or(0, |l| l.iter().filter(|&&v| v == label).count())
    }

    /// Distinct positive labels present in the mask, ascending.
    pub fn label_ids(&self) -> Vec<i32> {
        let mut ids: Vec<i32> = self
            .labels
            .as_ref()
            .map(|l| l.iter().copied().filter(|&v| v > 0).collect())
            .unwrap_or_default();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// Load a volume in the given format.
pub fn load_volume(path: &Path, format: VolumeFormat) -> Result<VoxelGrid> {
    match format {
        VolumeFormat::Mvol => load_mvol(path),
        VolumeFormat::Nifti => load_nifti(path),
    }
}

/// Load a label legend sidecar mapping label id to structure name.
pub fn load_label_legend(path: &Path) -> Result<BTreeMap<i32, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let raw: BTreeMap<String, String> = serde_json::from_str(&text)?;
    raw.into_iter()
        .map(|(k, v)| {
            k.trim()
                .parse::<i32>()
                .map(|id| (id, v))
                .map_err(|_| Error::MalformedHeader(format!("legend key '{k}' is not an integer")))
        })
        .collect()
}

pub fn write_label_legend(path: &Path, legend: &BTreeMap<i32, String>) -> Result<()> {
    let raw: BTreeMap<String, &String> = legend.iter().map(|(k, v)| (k.to_string(), v)).collect();
    let text = serde_json::to_string_pretty(&raw)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn unit_grid(dims: [usize; 3], values: Vec<f64>) -> VoxelGrid {
        VoxelGrid::new(dims, [1.0; 3], [0.0; 3], values).unwrap()
    }

    #[test]
    fn rejects_size_mismatch_and_bad_spacing() {
        assert!(matches!(
            VoxelGrid::new([4, 4, 4], [1.0; 3], [0.0; 3], vec![0.0; 60]),
            Err(Error::SizeMismatch {
                expected: 64,
                found: 60
            })
        ));
        assert!(matches!(
            VoxelGrid::new([1, 1, 1], [1.0, 0.0, 1.0], [0.0; 3], vec![0.0]),
            Err(Error::NonPositiveSpacing(_))
        ));
        let g = unit_grid([2, 1, 1], vec![0.0, 1.0]);
        assert!(g.with_labels(vec![1]).is_err());
    }

    #[test]
    fn normalize_examples() {
        let g = unit_grid([3, 1, 1], vec![2.0, 5.0, 8.0]);
        assert_eq!(g.normalize_intensities().unwrap().intensities(), &[0.0, 0.5, 1.0]);

        let hu = unit_grid([3, 1, 1], vec![-1000.0, 0.0, 3000.0]);
        assert_eq!(hu.normalize_intensities().unwrap().intensities(), &[0.0, 0.25, 1.0]);

        let unit = unit_grid([4, 1, 1], vec![0.0, 0.3, 0.7, 1.0]);
        assert_eq!(unit.normalize_intensities().unwrap(), unit);

        let flat = unit_grid([2, 1, 1], vec![3.0, 3.0]);
        assert!(matches!(flat.normalize_intensities(), Err(Error::DegenerateRange(_))));
    }

    #[test]
    fn normalization_keeps_labels() {
        let g = unit_grid([3, 1, 1], vec![1.0, 2.0, 3.0])
            .with_labels(vec![0, 4, 4])
            .unwrap();
        let n = g.normalize_intensities().unwrap();
        assert_eq!(n.labels(), Some(&[0, 4, 4][..]));
    }

    #[test]
    fn voxel_center_examples() {
        let g = VoxelGrid::new([2, 3, 4], [1.0, 1.0, 2.0], [0.0; 3], vec![0.0; 24]).unwrap();
        assert_eq!(g.voxel_center([0, 0, 0]).unwrap(), Point::origin());
        assert_eq!(g.voxel_center([1, 2, 3]).unwrap(), Point::new(1.0, 2.0, 6.0));
        assert!(matches!(g.voxel_center([2, 0, 0]), Err(Error::IndexOutOfBounds(_))));
    }

    #[test]
    fn world_to_index_lookups() {
        let g = unit_grid([5, 5, 5], vec![0.0; 125]);
        assert_eq!(
            g.world_to_index(&Point::new(2.4, 0.1, 3.4)),
            VoxelLookup::Inside([2, 0, 3])
        );
        // Cells are centered on voxel centers, so 3.9 lies in voxel 4's cell.
        assert_eq!(
            g.world_to_index(&Point::new(2.4, 0.1, 3.9)),
            VoxelLookup::Inside([2, 0, 4])
        );
        assert_eq!(g.world_to_index(&Point::new(-0.6, 0.0, 0.0)), VoxelLookup::OutOfBounds);
        assert_eq!(g.world_to_index(&Point::new(0.0, 0.0, 4.6)), VoxelLookup::OutOfBounds);
        assert_eq!(
            g.world_to_index(&Point::new(f64::NAN, 0.0, 0.0)),
            VoxelLookup::OutOfBounds
        );
    }

    #[test]
    fn round_trip_is_identity_on_all_centers() {
        let g = VoxelGrid::new([5, 5, 5], [0.7, 1.3, 0.25], [-3.0, 10.5, 2.0], vec![0.0; 125]).unwrap();
        for linear in 0..g.len() {
            let idx = g.grid_index(linear);
            assert_eq!(g.linear_index(idx), linear);
            let c = g.voxel_center(idx).unwrap();
            assert_eq!(g.world_to_index(&c), VoxelLookup::Inside(idx));
        }
    }

    #[test]
    fn lookup_is_within_half_spacing() {
        let g = VoxelGrid::new([7, 9, 5], [0.5, 1.5, 2.0], [1.0, -4.0, 0.3], vec![0.0; 315]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let p = Point::new(
                rng.random_range(0.75..4.25),
                rng.random_range(-4.0..8.0),
                rng.random_range(0.3..8.3),
            );
            let idx = g.world_to_index(&p).index().expect("in bounds");
            let c = g.voxel_center(idx).unwrap();
            for axis in 0..3 {
                assert!((c[axis] - p[axis]).abs() <= 0.5 * g.spacing()[axis] + 1e-12);
            }
        }
    }

    #[test]
    fn legend_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("legend.json");
        let legend: BTreeMap<i32, String> = [(1, "scaphoid".to_string()), (12, "lunate".to_string())].into();
        write_label_legend(&path, &legend).unwrap();
        assert_eq!(load_label_legend(&path).unwrap(), legend);
    }
}
