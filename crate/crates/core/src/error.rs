use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The input is valid but carries no usable information (e.g. zero intensity).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    /// Peak fitting could not be seeded.
    #[error("initialization error: {0}")]
    Init(String),

    #[error("fit failed: {message}")]
    Fit { message: String, diagnostics: String },

    /// A spectral line could not be followed across a waveplate sweep.
    #[error("lost track of line at waveplate angle {angle_deg}°: {reason}")]
    Tracking { angle_deg: f64, reason: String },

    #[error("no cavity dip found: {0}")]
    Detection(String),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }
}
