use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report.
///
/// Variants are grouped so that callers (the CLI in particular) can map them
/// onto "bad input" versus "runtime failure" without string matching; see
/// [`Error::is_input_error`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("unsupported file version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("word {0:?} is not in the vocabulary")]
    UnknownWord(String),

    #[error("token id {id} is out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { id: usize, vocab_size: usize },

    #[error("sequence length {len} exceeds maximum {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value at {location}")]
    NonFinite { location: String },

    #[error("role {role:?} has no parity-compatible partner role")]
    NoPartnerRole { role: String },

    #[error("faithfulness undefined: full-model metric {full} equals null-circuit metric {empty}")]
    UndefinedFaithfulness { full: f64, empty: f64 },

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("graph has no in-circuit edges to render")]
    EmptyFlow,

    #[error("circuit-induced subgraph is empty")]
    EmptySubgraph,

    #[error("eigensolver did not converge on a {0}x{0} Laplacian")]
    EigenNonConvergence(usize),

    #[error("at checkpoint step {step}")]
    AtStep {
        step: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(context: impl Into<String>, message: impl std::fmt::Display) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.to_string(),
        }
    }

    /// True for errors caused by the caller's inputs (missing or malformed
    /// files, bad configuration, incompatible data) rather than by a failure
    /// during computation.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::Version { .. }
            | Error::Config(_)
            | Error::InvalidInput(_)
            | Error::UnknownWord(_)
            | Error::TokenOutOfRange { .. }
            | Error::SequenceTooLong { .. }
            | Error::Shape(_)
            | Error::NoPartnerRole { .. } => true,
            Error::AtStep { source, .. } => source.is_input_error(),
            _ => false,
        }
    }
}
