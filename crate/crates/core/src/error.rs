use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("correspondence count mismatch: {src} source vs {dst} target points")]
    CountMismatch { src: usize, dst: usize },
}

#[derive(Debug, Error)]
pub enum SdfError {
    #[error("mesh has no triangles")]
    EmptyMesh,
    #[error("invalid grid parameter: {0}")]
    InvalidParameter(String),
    #[error("bad magic bytes, not a GSDF stream")]
    BadMagic,
    #[error("unsupported GSDF version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated GSDF stream")]
    TruncatedStream,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum RegistrationError {
    #[error("normal equations are numerically singular (degenerate point geometry)")]
    RankDeficient,
    #[error("too few inliers remain: {remaining} (need at least {required})")]
    TooFewInliers { remaining: usize, required: usize },
    #[error("too few points with positive weight: {got} (need at least {required})")]
    TooFewPoints { got: usize, required: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("region too small: {0}")]
    RegionTooSmall(String),
    #[error("invalid region mask: {0}")]
    InvalidMask(String),
    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("landmark count mismatch: {moved} moved vs {model} model")]
    CountMismatch { moved: usize, model: usize },
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("{path}: parse error at {location}: {message}")]
    Parse {
        path: PathBuf,
        location: Location,
        message: String,
    },
    #[error("cannot access {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Where a parse error occurred.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Line(usize),
    Offset(u64),
    Row(usize),
}

impl std::fmt::Display for Location {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Location::Line(n) => write!(f, "line {n}"),
            Location::Offset(n) => write!(f, "byte offset {n}"),
            Location::Row(n) => write!(f, "row {n}"),
        }
    }
}
