use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box ({x}, {y}, {w}, {h}): sides must be positive and finite")]
    InvalidBox { x: f64, y: f64, w: f64, h: f64 },

    #[error("image dimension {dim} is not a multiple of stride {stride}; pad the input first")]
    NotDivisible { dim: u32, stride: u32 },

    #[error("grid at stride {stride} is {cols}x{rows}; at least 2x2 cells are required")]
    GridTooSmall { stride: u32, cols: u32, rows: u32 },

    #[error("unsupported stride {0}; expected one of 8, 16, 32")]
    UnsupportedStride(u32),

    #[error("branch batch for stride {branch} contains an item anchored at stride {item}")]
    StrideMismatch { branch: u32, item: u32 },

    #[error("target with longer side {side} is not eligible at stride {stride} (limit {limit})")]
    IneligibleTarget { stride: u32, side: f64, limit: f64 },

    #[error("{name} must satisfy {range}, got {value}")]
    OutOfRange { name: &'static str, range: &'static str, value: f64 },

    #[error("topology rejected at node `{node}`: {reason}")]
    Topology { node: String, reason: String },

    #[error("unknown node id `{0}`")]
    UnknownNode(String),

    #[error("shape mismatch at node `{node}`: {reason}")]
    Shape { node: String, reason: String },

    #[error("malformed feature map: {0}")]
    FeatureMapFormat(String),

    #[error("malformed JSON at byte {offset}: {message}")]
    Json { offset: usize, message: String },

    #[error("annotation references unknown image id {0}")]
    UnknownImage(i64),

    #[error("{path}:{line}: {message}")]
    Record { path: String, line: usize, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
