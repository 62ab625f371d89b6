use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid camera pose: {0}")]
    InvalidPose(String),

    #[error("empty geometry: {0}")]
    EmptyGeometry(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("malformed header in {}: {msg}", .path.display())]
    MalformedHeader { path: PathBuf, msg: String },

    #[error("point {point} references unknown instance id {id}")]
    DanglingInstance { point: usize, id: i64 },

    #[error("length mismatch in {field}: expected {expected}, found {found}")]
    LengthMismatch {
        field: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("checksum mismatch for {}", .0.display())]
    ChecksumMismatch(PathBuf),

    #[error("invalid scene {scene}: {msg}")]
    InvalidScene { scene: String, msg: String },

    #[error("unknown instance id {0}")]
    UnknownInstance(u32),

    #[error("unparseable pose file {}: {msg}", .path.display())]
    PoseParse { path: PathBuf, msg: String },

    #[error("no usable camera poses in {}", .0.display())]
    NoPoses(PathBuf),

    #[error("no object instances in {}", .0.display())]
    NoInstances(PathBuf),

    #[error("target and anchor are the same instance ({0})")]
    SelfRelation(u32),

    #[error(
        "could not place {placed} of {requested} instances; reduce n_instances or enlarge the room"
    )]
    Capacity { placed: usize, requested: usize },

    #[error("dataset determinism token mismatch (expected {expected}, computed {computed})")]
    TokenMismatch { expected: String, computed: String },

    #[error("unsupported format version {found} (supported: {supported})")]
    VersionMismatch { found: u32, supported: u32 },

    #[error("sample count mismatch: manifest says {manifest}, found {found}")]
    CountMismatch { manifest: usize, found: usize },

    #[error("samples out of canonical order at {0}")]
    OutOfOrder(String),

    #[error("{}:{line}: {msg}", .path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("point index {index} out of range for scene with {count} points")]
    IndexOutOfRange { index: u64, count: usize },

    #[error("duplicate sample id {0}")]
    DuplicateSample(String),

    #[error("sample {sample} does not belong to scene {scene}")]
    SceneMismatch { sample: String, scene: String },

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
