use std::path::PathBuf;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid volume: {0}")]
    InvalidVolume(String),
    #[error("degenerate range: volume is constant")]
    DegenerateRange,
    #[error("invalid theta {0}: must lie in the open interval (0, 1)")]
    InvalidTheta(f64),
    #[error("theta too small for shape {shape:?} (theta = {theta})")]
    ThetaTooSmall { shape: Vec<usize>, theta: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("no donor volume supplied for modality {0}")]
    MissingDonor(String),
    #[error("missing modality {modality} for subject {subject}")]
    MissingModality { subject: String, modality: String },
    #[error("cohort of {n} subjects is too small for split ratios {ratios:?}")]
    SplitTooSmall { n: usize, ratios: Vec<f64> },
    #[error("training fraction {0} selects zero subjects")]
    EmptySubset(f64),
    #[error("degenerate phantom geometry after {0} attempts")]
    DegenerateGeometry(usize),
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
