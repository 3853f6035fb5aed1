use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not a proper rotation (orthogonality error {ortho:.3e}, det {det:.6})")]
    NotARotation { ortho: f64, det: f64 },

    #[error("grid level {level} exceeds the maximum of {max}")]
    LevelTooLarge { level: u32, max: u32 },

    #[error("unknown shape kind `{0}`")]
    UnknownKind(String),

    #[error("no symmetry group available for this shape")]
    NoGroupAvailable,

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("mesh has no faces")]
    EmptyMesh,

    #[error("mesh is not watertight: {0}")]
    NotWatertight(String),

    #[error("degenerate mesh: {0}")]
    DegenerateMesh(String),

    #[error("only {available} visible pixels, {requested} requested")]
    TooFewVisible { available: usize, requested: usize },

    #[error("all weights are zero")]
    AllZeroWeights,

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("measure does not match grid: {0}")]
    GridMismatch(String),

    #[error("pool of {available} cells is smaller than the requested top pool of {requested}")]
    PoolTooSmall { available: usize, requested: usize },

    #[error("ground-truth set is empty")]
    EmptyGtSet,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },

    #[error("bad file format: {0}")]
    Format(String),

    #[error("unsupported {what} version {found} (expected {expected})")]
    VersionMismatch { what: &'static str, found: u32, expected: u32 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
