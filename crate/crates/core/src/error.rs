use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point has non-positive camera depth {depth}")]
    NonPositiveDepth { depth: f64 },
    #[error("all eight box corners lie behind camera `{camera_id}`")]
    BoxBehindCamera { camera_id: String },
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("invalid camera `{camera_id}`: {reason}")]
    InvalidCamera { camera_id: String, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("unresolved reference: {0}")]
    Reference(String),
    #[error("frustum has {found} member points, need at least {required}")]
    EmptyFrustum { found: usize, required: usize },
    #[error("no anchor size for class {0}")]
    MissingAnchor(u32),
    #[error("no collision-free placement after {attempts} attempts")]
    PlacementExhausted { attempts: usize },
    #[error("novel-loss moving average {0} is too small to normalise by")]
    DegenerateEma(f64),
    #[error("cluster is degenerate: {0}")]
    DegenerateCluster(String),
    #[error("class set is empty")]
    EmptyClassSet,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("detector failure: {0}")]
    Detector(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad configuration rather than bad data.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
