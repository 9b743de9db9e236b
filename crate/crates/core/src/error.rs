use std::io;

use thiserror::Error;

use crate::feature_io::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("unsupported format version {found} (expected {expected})")]
    UnsupportedVersion { found: u16, expected: u16 },

    #[error("truncated header")]
    TruncatedHeader,

    #[error("truncated tensor {0}")]
    TruncatedTensor(String),

    #[error("malformed header: {0}")]
    Header(String),

    #[error("invalid feature pack {}: {}", .image_id, join_violations(.violations))]
    InvalidPack {
        image_id: String,
        violations: Vec<Violation>,
    },

    #[error("empty bank")]
    EmptyBank,

    #[error("bank build failed for pack {image_id}: {reason}")]
    Build { image_id: String, reason: String },

    #[error("corrupted bank: {0}")]
    CorruptBank(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown category {0:?}")]
    UnknownCategory(String),

    #[error("position ({h}, {w}) outside {height}x{width} grid")]
    OutOfGrid {
        h: usize,
        w: usize,
        height: usize,
        width: usize,
    },

    #[error("empty candidate set for layer {layer} at ({h}, {w})")]
    EmptyCandidates { layer: u32, h: usize, w: usize },

    #[error("empty reference set")]
    EmptySet,

    #[error("row {0} of the subset is missing from the superset")]
    NotSubset(usize),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("infeasible margin {0}: must lie in (0, 2)")]
    InfeasibleMargin(f64),

    #[error("synthetic generation failed: {0}")]
    Synth(String),

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("missing ground-truth mask for anomalous image {0}")]
    MissingMask(String),

    #[error("non-finite value in map at index {0}")]
    NonFinite(usize),

    #[error("png: {0}")]
    Png(String),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// True for errors caused by malformed inputs or configuration rather
    /// than by the environment.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::Png(_))
    }
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}
