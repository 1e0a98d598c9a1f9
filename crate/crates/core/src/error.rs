use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("format: {0}")]
    Format(String),

    #[error("invalid avatar vector: {}", .0.join("; "))]
    InvalidVector(Vec<String>),

    #[error("invalid schema: {0}")]
    InvalidSchema(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("latent code is in {found:?} space, expected {expected:?}")]
    WrongSpace {
        expected: crate::generators::Space,
        found: crate::generators::Space,
    },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("inversion aborted at step {step}: non-finite loss")]
    NonFiniteLoss { step: usize, trace: Vec<f64> },

    #[error("only {found} glasses-bearing samples out of {tried}; increase n (need {needed})")]
    TooFewGlassesSamples {
        found: usize,
        tried: usize,
        needed: usize,
    },

    #[error("dataset corrupted: {0}")]
    Corrupted(String),

    #[error("too many skipped samples: {skipped} of {total}")]
    TooManySkips { skipped: usize, total: usize },

    #[error("{0}")]
    Other(String),
}

impl Error {
    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidVector(_)
            | Error::InvalidSchema(_)
            | Error::Config(_)
            | Error::WrongSpace { .. } => 2,
            Error::Diverged(_) | Error::NonFiniteLoss { .. } | Error::TooManySkips { .. } => 3,
            _ => 1,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
