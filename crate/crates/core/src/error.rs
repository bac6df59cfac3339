use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Error, Debug)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("payload size mismatch: expected {expected} values, found {found}")]
    SizeMismatch { expected: usize, found: usize },

    #[error("voxel spacing must be strictly positive, got {0:?}")]
    NonPositiveSpacing([f64; 3]),

    #[error("unsupported data type: {0}")]
    UnsupportedDatatype(String),

    #[error("oblique or permuted affine is not supported: {0}")]
    ObliqueAffine(String),

    #[error("degenerate intensity range: all values equal {0}")]
    DegenerateRange(f64),

    #[error("voxel index {0:?} out of bounds")]
    IndexOutOfBounds([usize; 3]),

    #[error("volume has no label mask")]
    MissingMask,

    #[error("label {0} does not occur in the mask")]
    LabelAbsent(i32),

    #[error("mesh parse error: {0}")]
    MeshParse(String),

    #[error("face {face} references vertex {index} but the mesh has {vertex_count} vertices")]
    FaceIndexOutOfRange {
        face: usize,
        index: usize,
        vertex_count: usize,
    },

    #[error("degenerate triangle {0}: indices must be distinct")]
    DegenerateTriangle(usize),

    #[error("invalid scalar field '{name}': {reason}")]
    InvalidField { name: String, reason: String },

    #[error("unknown channel '{0}'")]
    UnknownChannel(String),

    #[error("mesh has no vertices")]
    EmptyMesh,

    #[error("degenerate source: {0}")]
    DegenerateSource(String),

    #[error("no candidate voxel for any vertex under {0} mapping")]
    EmptyCandidates(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("criterion mismatch: {left} vs {right}")]
    CriterionMismatch { left: String, right: String },

    #[error("epsilon must be strictly positive, got {0}")]
    InvalidEpsilon(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate distribution: {0}")]
    DegenerateDistribution(String),

    #[error("insufficient structure: found {found} inflexion points, need at least {needed}")]
    InsufficientStructure { found: usize, needed: usize },

    #[error("missing mapping criterion: {0}")]
    MissingCriterion(String),

    #[error("incomplete bundle: {0}")]
    IncompleteBundle(String),

    #[error("missing channel '{channel}' on mesh '{mesh}'")]
    MissingChannel { mesh: String, channel: String },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
