use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema violation in field `{field}`: {reason}")]
    SchemaViolation { field: String, reason: String },
    #[error("cell {cell_id}: cycle {cycle_index} violates curve monotonicity")]
    MonotonicityViolation { cell_id: String, cycle_index: u32 },
    #[error("invalid synthetic parameters: {0}")]
    InvalidParams(String),
    #[error("unknown cell id `{0}`")]
    UnknownCellId(String),
    #[error("cell `{0}` appears in more than one split")]
    OverlappingSplits(String),

    #[error("degenerate curve: fewer than 2 distinct voltages")]
    DegenerateCurve,
    #[error("cell {cell_id}: baseline cycle {cycle} is missing")]
    MissingBaselineCycle { cell_id: String, cycle: u32 },
    #[error("cell {cell_id}: no cycles in window {start}..={terminal}")]
    EmptyWindow { cell_id: String, start: u32, terminal: u32 },
    #[error("cell {cell_id}: window terminal cycle {terminal} is not below cycle life {cycle_life}")]
    WindowExceedsLife { cell_id: String, terminal: u32, cycle_life: u32 },
    #[error("cell {cell_id}: window {start}..={terminal} exceeds available cycles (last is {available})")]
    WindowExceedsData { cell_id: String, start: u32, terminal: u32, available: u32 },
    #[error("cell {cell_id}: shift {shift} exceeds available data")]
    ShiftExceedsData { cell_id: String, shift: u32 },
    #[error("cell {cell_id}: cycle {cycle} is missing")]
    MissingCycle { cell_id: String, cycle: u32 },
    #[error("cells missing required cycles: {0}")]
    MissingCycles(String),
    #[error("degenerate variance: capacity difference is constant across the grid")]
    DegenerateVariance,
    #[error("empty input")]
    EmptyInput,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("forward cache does not belong to this network")]
    StaleCache,
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("model artifact version {found} is not supported (expected {expected})")]
    ArtifactVersionMismatch { found: u32, expected: u32 },
    #[error("malformed model artifact: {0}")]
    MalformedArtifact(String),

    #[error("degenerate design: all features are equal")]
    DegenerateDesign,
    #[error("actual value is zero at index {0}")]
    ZeroActual(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("seed {seed}, {config}: {source}")]
    Experiment {
        seed: u64,
        config: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    /// Errors caused by the filesystem or by malformed files rather than by
    /// the numerical content of valid inputs.
    pub fn is_io_or_schema(&self) -> bool {
        match self {
            Error::MissingFile(_)
            | Error::Io { .. }
            | Error::SchemaViolation { .. }
            | Error::MonotonicityViolation { .. }
            | Error::Json(_)
            | Error::ArtifactVersionMismatch { .. }
            | Error::MalformedArtifact(_) => true,
            Error::Experiment { source, .. } => source.is_io_or_schema(),
            _ => false,
        }
    }
}
