use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected} features, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("{algorithm} needs at least two classes in its training data, but every label is {class:?}")]
    SingleClass { algorithm: &'static str, class: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("schemas {source_columns:?} and {target_columns:?} share no columns; distillation is impossible between disjoint feature spaces")]
    DisjointSchemas {
        source_columns: Vec<String>,
        target_columns: Vec<String>,
    },

    #[error("malformed model file: {0}")]
    Format(String),

    #[error("unsupported file version {found}; this build reads version {supported} and older")]
    UnsupportedVersion { found: u8, supported: u8 },

    #[error("non-finite objective: {0}")]
    NonFinite(String),

    #[error("privacy violation: {0}")]
    PrivacyViolation(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("cannot parse {what}: {message}")]
    Parse { what: String, message: String },
}

impl Error {
    /// Wraps the error with a description of where it happened.
    pub fn context(self, context: impl Into<String>) -> Error {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// True for errors caused by bad user input rather than a failed run.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Context { source, .. } => source.is_validation(),
            Error::InvalidConfig(_)
            | Error::InvalidData(_)
            | Error::Schema(_)
            | Error::DimensionMismatch { .. }
            | Error::SingleClass { .. }
            | Error::DisjointSchemas { .. }
            | Error::Format(_)
            | Error::UnsupportedVersion { .. }
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Parse { .. } => true,
            Error::NonFinite(_) | Error::PrivacyViolation(_) => false,
        }
    }
}

pub(crate) trait ResultExt<T> {
    fn context(self, context: impl FnOnce() -> String) -> Result<T>;
}

impl<T, E: Into<Error>> ResultExt<T> for std::result::Result<T, E> {
    fn context(self, context: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|e| e.into().context(context()))
    }
}
