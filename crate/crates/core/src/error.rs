use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("corrupt archive: {0}")]
    CorruptArchive(String),

    #[error("unsupported archive version or dtype: {0}")]
    Version(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid condition: {0}")]
    Condition(String),

    #[error("timestep ordering violated: t={t}, t_prev={t_prev}")]
    Ordering { t: usize, t_prev: usize },

    #[error("non-finite values at step {step}: {what}")]
    Numeric { step: usize, what: String },

    #[error("training diverged at iteration {iteration}: {reason}")]
    Training { iteration: usize, reason: String },

    #[error("incompatible components: {0}")]
    Compatibility(String),

    #[error("missing state: {0}")]
    State(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("no alternative target: {0}")]
    NoAlternative(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for errors caused by caller input (bad config, bad files, bad
    /// shapes) rather than by a failure inside a computation.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidShape(_)
                | Error::ShapeMismatch(_)
                | Error::Range(_)
                | Error::CorruptArchive(_)
                | Error::Version(_)
                | Error::Config(_)
                | Error::Condition(_)
                | Error::Compatibility(_)
                | Error::State(_)
                | Error::EmptyInput(_)
                | Error::NoAlternative(_)
                | Error::Io { .. }
                | Error::Json(_)
        )
    }
}
