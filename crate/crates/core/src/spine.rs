//! Vertebra characterisation from the distribution of vertex distances to the
//! vertebral body centroid.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{channel, ChannelRange, ScalarField, TriangleMesh};
use crate::texture::{region_mean_intensity, CriterionKind};
use crate::Point;

pub const DENSITY_SAMPLES: usize = 512;
/// Below this many samples the bandwidth is widened.
pub const MIN_SAMPLES: usize = 50;
/// The density grid extends this many bandwidths past the largest sample.
const GRID_TAIL: f64 = 3.0;

/// Per-vertex distance to `c`, as channel `centroid_dist`.
pub fn centroid_distances(mesh: &TriangleMesh, c: &Point) -> Result<ScalarField> {
    if !c.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidParameter(format!("centroid {c:?} is not finite")));
    }
    let d = mesh.vertices().iter().map(|p| (p - c).norm()).collect();
    ScalarField::new(channel::CENTROID_DISTANCE, d, ChannelRange::Unbounded)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bandwidth {
    /// Silverman's rule of thumb.
    #[default]
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InflexionKind {
    /// Curvature turns from convex to concave (rising flank of a mode).
    ConvexToConcave,
    /// Curvature turns from concave to convex (falling flank of a mode).
    ConcaveToConvex,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Inflexion {
    pub distance: f64,
    pub kind: InflexionKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityCurve {
    pub sample_xs: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
    /// Set when the bandwidth was widened because of too few samples.
    pub widened: bool,
    pub inflexions: Vec<Inflexion>,
}

impl DensityCurve {
    /// Trapezoidal integral of the density over the sample grid.
    pub fn integral(&self) -> f64 {
        trapezoid(&self.sample_xs, &self.density)
    }

    pub fn inflexion_distances(&self) -> Vec<f64> {
        self.inflexions.iter().map(|i| i.distance).collect()
    }
}

fn trapezoid(xs: &[f64], ys: &[f64]) -> f64 {
    xs.windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / 2.0)
        .sum()
}

/// Silverman's normal-reference rule `(4/3)^(1/5) * sd * n^(-1/5)`.
///
/// The IQR-capped variant is not used: a vertebral body is a large share of
/// the vertices at nearly one distance, which drives the IQR towards zero.
pub fn silverman_bandwidth(values: &[f64]) -> Result<f64> {
    let n = values.len();
    if n < 2 {
        return Err(Error::DegenerateDistribution(format!("{n} samples")));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt();
    if !(sd > 0.0) {
        return Err(Error::DegenerateDistribution("all distances are equal".into()));
    }
    Ok((4.0f64 / 3.0).powf(0.2) * sd * (n as f64).powf(-0.2))
}

/// Gaussian kernel density estimate of `distances` on [`DENSITY_SAMPLES`]
/// uniform samples over `[0, max + 3h]`, renormalised to unit integral.
pub fn estimate_density(distances: &[f64], bandwidth: Bandwidth) -> Result<DensityCurve> {
    let values: Vec<f64> = distances.iter().copied().filter(|v| v.is_finite()).collect();
    if values.is_empty() {
        return Err(Error::DegenerateDistribution("no finite distances".into()));
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi <= lo {
        return Err(Error::DegenerateDistribution("all distances are equal".into()));
    }
    let mut h = match bandwidth {
        Bandwidth::Auto => silverman_bandwidth(&values)?,
        Bandwidth::Fixed(h) if h > 0.0 && h.is_finite() => h,
        Bandwidth::Fixed(h) => return Err(Error::InvalidParameter(format!("bandwidth {h}"))),
    };
    let mut widened = false;
    if values.len() < MIN_SAMPLES {
        h *= (MIN_SAMPLES as f64 / values.len() as f64).powf(0.2);
        widened = true;
        log::warn!("only {} distance samples; bandwidth widened to {h:.4} mm", values.len());
    }

    let top = hi + GRID_TAIL * h;
    let xs: Vec<f64> = (0..DENSITY_SAMPLES)
        .map(|i| top * i as f64 / (DENSITY_SAMPLES - 1) as f64)
        .collect();
    let norm = 1.0 / (values.len() as f64 * h * (2.0 * PI).sqrt());
    let mut density: Vec<f64> = xs
        .par_iter()
        .map(|&x| {
            values
                .iter()
                .map(|&v| {
                    let z = (x - v) / h;
                    (-0.5 * z * z).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect();
    let total = trapezoid(&xs, &density);
    if !(total > 0.0) {
        return Err(Error::DegenerateDistribution("density integrates to zero".into()));
    }
    for d in &mut density {
        *d /= total;
    }
    let inflexions = find_inflexions(&xs, &density);
    Ok(DensityCurve {
        sample_xs: xs,
        density,
        bandwidth: h,
        widened,
        inflexions,
    })
}

/// Sign changes of the central second difference of `ys`, located by linear
/// interpolation and returned in increasing order.
///
/// Second differences below a small fraction of their maximum count as zero.
/// Crossings closer than two grid steps are merged: an odd cluster becomes a
/// single crossing at its mean position, an even cluster cancels out.
pub fn find_inflexions(xs: &[f64], ys: &[f64]) -> Vec<Inflexion> {
    if xs.len() < 3 || xs.len() != ys.len() {
        return Vec::new();
    }
    let second: Vec<(f64, f64)> = (1..xs.len() - 1)
        .map(|i| (xs[i], ys[i - 1] - 2.0 * ys[i] + ys[i + 1]))
        .collect();
    let max_s = second.iter().fold(0.0f64, |m, (_, s)| m.max(s.abs()));
    let max_y = ys.iter().fold(0.0f64, |m, y| m.max(y.abs()));
    let zero = (1e-9 * max_s).max(1e-12 * max_y);
    let signed: Vec<(f64, f64)> = second.into_iter().filter(|(_, s)| s.abs() > zero).collect();

    let mut raw = Vec::new();
    for w in signed.windows(2) {
        let ((x0, s0), (x1, s1)) = (w[0], w[1]);
        if s0.signum() != s1.signum() {
            raw.push(Inflexion {
                distance: x0 + (x1 - x0) * s0 / (s0 - s1),
                kind: if s0 > 0.0 {
                    InflexionKind::ConvexToConcave
                } else {
                    InflexionKind::ConcaveToConvex
                },
            });
        }
    }

    let step = (xs[xs.len() - 1] - xs[0]) / (xs.len() - 1) as f64;
    let mut merged = Vec::new();
    let mut i = 0;
    while i < raw.len() {
        let mut j = i + 1;
        while j < raw.len() && raw[j].distance - raw[j - 1].distance < 2.0 * step {
            j += 1;
        }
        let cluster = &raw[i..j];
        if cluster.len() % 2 == 1 {
            merged.push(Inflexion {
                distance: cluster.iter().map(|c| c.distance).sum::<f64>() / cluster.len() as f64,
                kind: cluster[0].kind,
            });
        }
        i = j;
    }
    merged
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionThresholds {
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    /// Only two inflexions were available; `t3` is the largest distance.
    pub degraded: bool,
}

impl RegionThresholds {
    pub fn new(t1: f64, t2: f64, t3: f64) -> Result<Self> {
        if !(0.0 < t1 && t1 < t2 && t2 < t3) {
            return Err(Error::InvalidParameter(format!(
                "thresholds must satisfy 0 < T1 < T2 < T3, got ({t1}, {t2}, {t3})"
            )));
        }
        Ok(Self {
            t1,
            t2,
            t3,
            degraded: false,
        })
    }

    /// Threshold representing `region` (T1 body, T2 arch, T3 processes).
    pub fn for_region(&self, region: u8) -> f64 {
        match region {
            0 => self.t1,
            1 => self.t2,
            _ => self.t3,
        }
    }
}

/// The first three of an ordered inflexion list.
pub fn select_thresholds(inflexions: &[f64]) -> Result<RegionThresholds> {
    match inflexions {
        [t1, t2, t3, ..] => RegionThresholds::new(*t1, *t2, *t3),
        _ => Err(Error::InsufficientStructure {
            found: inflexions.len(),
            needed: 3,
        }),
    }
}

/// Thresholds for a vertebra: the falling-flank inflexions of its density
/// curve, which sit where each functional region's distance population ends.
/// With only two of them, T3 falls back to `max_distance` and the result is
/// marked degraded.
pub fn vertebra_thresholds(curve: &DensityCurve, max_distance: f64) -> Result<RegionThresholds> {
    let falling: Vec<f64> = curve
        .inflexions
        .iter()
        .filter(|i| i.kind == InflexionKind::ConcaveToConvex && i.distance > 0.0)
        .map(|i| i.distance)
        .collect();
    match falling.len() {
        0 | 1 => Err(Error::InsufficientStructure {
            found: falling.len(),
            needed: 3,
        }),
        2 => {
            log::warn!("only two inflexions found; T3 set to the maximum distance");
            let mut t = RegionThresholds::new(falling[0], falling[1], max_distance.max(falling[1] * (1.0 + 1e-9)))?;
            t.degraded = true;
            Ok(t)
        }
        _ => select_thresholds(&falling),
    }
}

/// Region labels with half-open intervals: 0 for `d < T1`, 1 for
/// `T1 <= d < T2`, 2 otherwise. Channel `region`.
pub fn segment_vertebra(distances: &[f64], t: &RegionThresholds) -> Result<ScalarField> {
    let labels = distances
        .iter()
        .map(|&d| {
            if d < t.t1 {
                0.0
            } else if d < t.t2 {
                1.0
            } else {
                2.0
            }
        })
        .collect();
    ScalarField::new(channel::REGION, labels, ChannelRange::Label)
}

/// One row of the geometry-tissue report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TissueRecord {
    pub subject: String,
    pub vertebra_id: i32,
    pub region: u8,
    pub criterion: CriterionKind,
    pub threshold_mm: f64,
    /// `None` when the region has no mapped vertex.
    pub mean_intensity: Option<f64>,
    pub vertex_count: usize,
    pub outlier_flag: bool,
}

/// Records for one vertebra, one per (region, criterion). All three mapping
/// criteria must be supplied.
pub fn vertebra_records(
    subject: &str,
    vertebra_id: i32,
    thresholds: &RegionThresholds,
    regions: &ScalarField,
    textures: &BTreeMap<CriterionKind, ScalarField>,
) -> Result<Vec<TissueRecord>> {
    let mut out = Vec::new();
    for kind in CriterionKind::ALL {
        let tex = textures
            .get(&kind)
            .ok_or_else(|| Error::MissingCriterion(kind.to_string()))?;
        for m in region_mean_intensity(tex, regions)? {
            out.push(TissueRecord {
                subject: subject.to_string(),
                vertebra_id,
                region: m.region,
                criterion: kind,
                threshold_mm: thresholds.for_region(m.region),
                mean_intensity: m.mean,
                vertex_count: m.vertex_count,
                outlier_flag: false,
            });
        }
    }
    Ok(out)
}

/// Fewest vertebrae for which cohort statistics are computed.
pub const MIN_COHORT: usize = 3;

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

/// Median and median absolute deviation.
pub fn median_mad(values: &[f64]) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let med = median(&v);
    let mut dev: Vec<f64> = v.iter().map(|x| (x - med).abs()).collect();
    dev.sort_by(f64::total_cmp);
    (med, median(&dev))
}

/// True when `x` lies outside `median ± 3 MAD`. A tiny floor on the MAD keeps
/// rounding noise in otherwise identical values from being flagged.
pub fn is_outlier(x: f64, med: f64, mad: f64) -> bool {
    let spread = mad.max(1e-6 * med.abs().max(1.0));
    (x - med).abs() > 3.0 * spread
}

/// Flag records whose threshold or mean intensity falls outside the robust
/// range of their (region, criterion) group. Groups with fewer than
/// [`MIN_COHORT`] vertebrae are left unflagged.
pub fn flag_outliers(records: &mut [TissueRecord]) {
    let mut groups: BTreeMap<(u8, CriterionKind), Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        groups.entry((r.region, r.criterion)).or_default().push(i);
    }
    for members in groups.values() {
        if members.len() < MIN_COHORT {
            continue;
        }
        let thresholds: Vec<f64> = members.iter().map(|&i| records[i].threshold_mm).collect();
        let (t_med, t_mad) = median_mad(&thresholds);
        let means: Vec<f64> = members.iter().filter_map(|&i| records[i].mean_intensity).collect();
        let mean_stats = (means.len() >= MIN_COHORT).then(|| median_mad(&means));
        for &i in members {
            let r = &mut records[i];
            let t_out = is_outlier(r.threshold_mm, t_med, t_mad);
            let m_out = match (r.mean_intensity, mean_stats) {
                (Some(m), Some((med, mad))) => is_outlier(m, med, mad),
                _ => false,
            };
            r.outlier_flag = t_out || m_out;
        }
    }
}

/// (subject, vertebra) pairs with at least one flagged record.
pub fn flagged_vertebrae(records: &[TissueRecord]) -> Vec<(String, i32)> {
    let mut out: Vec<(String, i32)> = records
        .iter()
        .filter(|r| r.outlier_flag)
        .map(|r| (r.subject.clone(), r.vertebra_id))
        .collect();
    out.dedup();
    out.sort();
    out.dedup();
    out
}
