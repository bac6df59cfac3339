//! The `morphofuse` workflows: follow-up comparison, spine characterisation,
//! phantom generation and viewer export.

mod config;
mod exam;
mod export;
mod followup;
mod spine_cmd;
mod tools;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use config::{ConfigFile, D2Normalization, FollowupParams, SpineParams};
pub use exam::{texture_grid, Exam, InputRecord};
pub use export::{cmd_export_viewer, ChannelEntry, CurveEntry, MeshEntry, ViewerManifest, MANIFEST_VERSION};
pub use followup::{cmd_followup, BoneSummary, EpsilonDetections, FollowupManifest, FollowupReport};
pub use spine_cmd::{cmd_spine, records_csv, CentroidSource, SpineManifest, SpineReport, VertebraReport};
pub use tools::{cmd_fuse, cmd_map, MapArgs};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// How a command ended, mapped to process exit codes 0 and 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// Some bones or vertebrae were skipped.
    Partial,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Success => 0,
            Outcome::Partial => 2,
        }
    }
}

/// A bone or vertebra left out of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub bone_id: i32,
    pub reason: String,
}

impl Skipped {
    pub fn new(bone_id: i32, reason: &str) -> Self {
        Self {
            bone_id,
            reason: reason.to_string(),
        }
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
