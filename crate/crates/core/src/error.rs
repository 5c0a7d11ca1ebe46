use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("degenerate element {element}: det J = {det_j:e}")]
    DegenerateElement { element: usize, det_j: f64 },

    #[error("invalid material: {0}")]
    InvalidMaterial(String),

    #[error("singular matrix: pivot {pivot} is {value:e} (unconstrained rigid mode?)")]
    SingularMatrix { pivot: usize, value: f64 },

    #[error("linear solve residual {residual:e} exceeds {tolerance:e}")]
    InaccurateSolve { residual: f64, tolerance: f64 },

    #[error("staggered solve did not converge at load step {step} (lf = {lf}): last max |dd| = {last_delta:e}")]
    StaggeredNotConverged { step: usize, lf: f64, last_delta: f64 },

    #[error("loadfactor {requested} was not simulated; available: {available:?}")]
    LoadfactorMissing { requested: f64, available: Vec<f64> },

    #[error("non-finite activation in layer {layer}")]
    NonFiniteForward { layer: usize },

    #[error("non-finite loss contribution at collocation row {row}")]
    NonFiniteLoss { row: usize },

    #[error("training aborted at epoch {epoch}: {source}")]
    TrainingAborted {
        epoch: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("I-FENN did not converge ({reason}) after {iterations} iterations")]
    IfennNotConverged {
        reason: String,
        iterations: usize,
        residual_norms: Vec<f64>,
        increment_norms: Vec<f64>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing snapshot {0}")]
    MissingSnapshot(PathBuf),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
