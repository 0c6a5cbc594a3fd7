use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),
    #[error("row count mismatch: expected {expected} rows, stream produced {actual}")]
    RowCountMismatch { expected: usize, actual: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("sketch too large to materialize: {entries} nonzeros exceeds limit {limit}")]
    TooLarge { entries: usize, limit: usize },
    #[error("degenerate sketch: largest eigenvalue {0} is not positive")]
    DegenerateSketch(f64),
    #[error("matrix is not symmetric (relative asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("sample count mismatch: {0}")]
    SampleCountMismatch(String),
    #[error("no alignment signal: every layer has zero correlation with the targets")]
    NoSignal,
    #[error("kernel has zero Frobenius norm")]
    ZeroKernel,
    #[error("alignment weights have empty support")]
    EmptySupport,
    #[error("degenerate features: {0}")]
    DegenerateFeatures(String),
    #[error("at least two samples are required")]
    SingleSample,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("beta_prime > 0 but no unlabeled samples were provided")]
    NoUnlabeled,
    #[error("class {class} has {available} samples, {requested} requested")]
    ClassExhausted {
        class: usize,
        available: usize,
        requested: usize,
    },
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("linear system is not positive definite")]
    SingularSystem,
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("shape mismatch in {context}: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("non-finite value in {0}")]
    NonFiniteData(String),
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("npy format: {0}")]
    Npy(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Whether the error stems from invalid user input (config, manifest,
    /// data files) rather than a failure during computation.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Stage { source, .. } => source.is_validation(),
            Error::MissingFile(_)
            | Error::ShapeMismatch { .. }
            | Error::NonFiniteData(_)
            | Error::Manifest(_)
            | Error::Config(_)
            | Error::Npy(_)
            | Error::Json(_)
            | Error::InvalidDimensions(_)
            | Error::InvalidParameter(_)
            | Error::ClassExhausted { .. } => true,
            _ => false,
        }
    }

    pub(crate) fn at(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |source| Error::Stage {
            stage,
            source: Box::new(source),
        }
    }
}
