use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("singular input: {0}")]
    Singular(String),

    #[error("ambiguous body axes: no coordinate has a positive head-over-pelvis offset")]
    AmbiguousAxes,

    #[error("degenerate yaw at frame {frame}: hip vector has zero ground-plane length")]
    DegenerateYaw { frame: usize },

    #[error("unsupported primitive `{0}`")]
    UnsupportedPrimitive(String),

    #[error("unknown predicate `{0}`")]
    UnknownPredicate(String),

    #[error("sequence too short: {needed} frames required, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate embedding: pre-normalisation vector has zero norm")]
    DegenerateEmbedding,

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("training diverged at step {step}: {what} is not finite")]
    Diverged { step: usize, what: String },

    #[error("frozen backbone drifted: digest {before} became {after}")]
    BackboneDrift { before: String, after: String },

    #[error("bank kind mismatch: {0}")]
    KindMismatch(String),

    #[error("generator failed for group {group}, prompt `{prompt}`: {source}")]
    Generator {
        group: usize,
        prompt: String,
        #[source]
        source: Box<Error>,
    },

    #[error("stage `{stage}`: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("stage `{stage}` is missing its input artifact {path}")]
    MissingArtifact { stage: String, path: String },

    #[error("schema violation: {0}")]
    Schema(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::Dimension {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// True for errors caused by bad user input rather than internal failures.
    pub fn is_user_error(&self) -> bool {
        match self {
            Error::Stage { source, .. } | Error::Generator { source, .. } => source.is_user_error(),
            Error::Diverged { .. } | Error::BackboneDrift { .. } => false,
            _ => true,
        }
    }
}
