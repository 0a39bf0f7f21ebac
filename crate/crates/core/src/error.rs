use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("graph contains a cycle through nodes {cycle:?}")]
    CyclicGraph { cycle: Vec<usize> },

    #[error("size mismatch: {what} (expected {expected}, got {got})")]
    SizeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("self-edge on node {0}")]
    SelfEdge(usize),

    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),

    #[error("node {node} references missing child {child}")]
    DanglingChild { node: usize, child: usize },

    #[error("infeasible generator bounds: {0}")]
    InfeasibleBounds(String),

    #[error("timestep {t} outside [0, {max}]")]
    TimestepOutOfRange { t: usize, max: usize },

    #[error("degenerate schedule: beta offset {offset} >= T = {t_max}")]
    DegenerateSchedule { offset: f64, t_max: usize },

    #[error("posterior requires tau_prev <= tau_cur, got {prev} > {cur}")]
    NonMonotoneTimesteps { prev: usize, cur: usize },

    #[error("zero-probability conditioning for element {element} (state {state}, clean class {class})")]
    ZeroDenominator {
        element: String,
        state: usize,
        class: usize,
    },

    #[error("distribution does not sum to one (sum = {sum})")]
    Unnormalized { sum: f64 },

    #[error("level structure sampling failed after {retries} retries")]
    LevelStructure { retries: usize },

    #[error("empty distribution: {0}")]
    EmptyDistribution(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("loss variable does not belong to this tape")]
    ForeignVariable,

    #[error("no editable gate in circuit")]
    NoEditableGate,

    #[error("{path}:{line}: {msg}")]
    Record {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("checkpoint: bad magic bytes")]
    BadMagic,

    #[error("checkpoint: unsupported version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint: truncated ({0})")]
    Truncated(String),

    #[error("checkpoint: manifest mismatch ({0})")]
    ManifestMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by numerics rather than inputs or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_)
                | Error::ZeroDenominator { .. }
                | Error::Unnormalized { .. }
                | Error::DegenerateSchedule { .. }
        )
    }

    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Record { .. }
                | Error::BadMagic
                | Error::VersionMismatch { .. }
                | Error::Truncated(_)
                | Error::ManifestMismatch(_)
        )
    }
}
