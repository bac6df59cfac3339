//! Run parameters and the optional TOML config file.
//!
//! Resolution order, lowest to highest precedence: built-in defaults,
//! command-line flags, then any key present in the config file.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::DEFAULT_SWEEP;
use crate::registration::{DistanceMetric, IcpParams};
use crate::texture::{CriterionKind, DEFAULT_SEARCH_RADIUS};

/// Scope over which d2 is min-max normalised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum D2Normalization {
    #[default]
    Bone,
    District,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FollowupParams {
    pub icp: IcpParams,
    pub criterion: CriterionKind,
    pub search_radius_mm: f64,
    pub epsilon_sweep: Vec<f64>,
    pub normalization: D2Normalization,
    /// Fused values above this count as detections in the report.
    pub detection_threshold: f64,
    #[serde(default)]
    pub distance: DistanceMetric,
}

impl Default for FollowupParams {
    fn default() -> Self {
        Self {
            icp: IcpParams::default(),
            criterion: CriterionKind::External,
            search_radius_mm: DEFAULT_SEARCH_RADIUS,
            epsilon_sweep: DEFAULT_SWEEP.to_vec(),
            normalization: D2Normalization::Bone,
            detection_threshold: 0.5,
            distance: DistanceMetric::Vertex,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpineParams {
    /// Fixed KDE bandwidth in mm; Silverman's rule when absent.
    pub bandwidth_mm: Option<f64>,
    pub search_radius_mm: f64,
}

impl Default for SpineParams {
    fn default() -> Self {
        Self {
            bandwidth_mm: None,
            search_radius_mm: DEFAULT_SEARCH_RADIUS,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct IcpOverrides {
    tol: Option<f64>,
    max_iters: Option<usize>,
    trim: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FollowupOverrides {
    icp: Option<IcpOverrides>,
    criterion: Option<CriterionKind>,
    search_radius_mm: Option<f64>,
    epsilon_sweep: Option<Vec<f64>>,
    normalization: Option<D2Normalization>,
    detection_threshold: Option<f64>,
    distance: Option<DistanceMetric>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpineOverrides {
    bandwidth_mm: Option<f64>,
    search_radius_mm: Option<f64>,
}

/// Parsed config file; only the keys actually present override anything.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub threads: Option<usize>,
    followup: Option<FollowupOverrides>,
    spine: Option<SpineOverrides>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn apply_followup(&self, p: &mut FollowupParams) {
        let Some(o) = &self.followup else { return };
        if let Some(icp) = &o.icp {
            if let Some(v) = icp.tol {
                p.icp.tol = v;
            }
            if let Some(v) = icp.max_iters {
                p.icp.max_iters = v;
            }
            if let Some(v) = icp.trim {
                p.icp.trim = v;
            }
        }
        if let Some(v) = o.criterion {
            p.criterion = v;
        }
        if let Some(v) = o.search_radius_mm {
            p.search_radius_mm = v;
        }
        if let Some(v) = &o.epsilon_sweep {
            p.epsilon_sweep = v.clone();
        }
        if let Some(v) = o.normalization {
            p.normalization = v;
        }
        if let Some(v) = o.detection_threshold {
            p.detection_threshold = v;
        }
        if let Some(v) = o.distance {
            p.distance = v;
        }
    }

    pub fn apply_spine(&self, p: &mut SpineParams) {
        let Some(o) = &self.spine else { return };
        if o.bandwidth_mm.is_some() {
            p.bandwidth_mm = o.bandwidth_mm;
        }
        if let Some(v) = o.search_radius_mm {
            p.search_radius_mm = v;
        }
    }
}
