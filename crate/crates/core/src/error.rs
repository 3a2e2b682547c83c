use thiserror::Error;

use crate::relstore::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error in {location}: {message}")]
    Parse { location: String, message: String },

    #[error("integrity error: {}", format_violations(.0))]
    Integrity(Vec<Violation>),

    #[error("syntax error at offset {position}: {message}")]
    Syntax { position: usize, message: String },

    #[error("unsupported feature at offset {position}: {feature}")]
    UnsupportedFeature { position: usize, feature: String },

    #[error("unknown subject `{0}`")]
    UnknownSubject(String),

    #[error("unknown table `{0}`")]
    UnknownTable(String),

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("ambiguous column `{0}`")]
    AmbiguousColumn(String),

    #[error("context key `{0}` is not bound in this session")]
    UnboundContextKey(String),

    #[error("query shape error: {0}")]
    Shape(String),

    #[error("no join chain from `subject` to `{0}`")]
    NoChain(String),

    #[error("unknown session `{0}`")]
    UnknownSession(String),

    #[error("invalid geocode ({lat}, {lon})")]
    InvalidGeocode { lat: f64, lon: f64 },

    #[error("scenario error at step {step}: {message}")]
    Scenario { step: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable short code used by the command-line front end.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "E_PARSE",
            Error::Integrity(_) => "E_INTEGRITY",
            Error::Syntax { .. } => "E_SYNTAX",
            Error::UnsupportedFeature { .. } => "E_UNSUPPORTED",
            Error::UnknownSubject(_) => "E_UNKNOWN_SUBJECT",
            Error::UnknownTable(_) => "E_UNKNOWN_TABLE",
            Error::UnknownColumn(_) => "E_UNKNOWN_COLUMN",
            Error::AmbiguousColumn(_) => "E_AMBIGUOUS_COLUMN",
            Error::UnboundContextKey(_) => "E_UNBOUND_CONTEXT",
            Error::Shape(_) => "E_SHAPE",
            Error::NoChain(_) => "E_NO_CHAIN",
            Error::UnknownSession(_) => "E_UNKNOWN_SESSION",
            Error::InvalidGeocode { .. } => "E_GEOCODE",
            Error::Scenario { .. } => "E_SCENARIO",
            Error::Io(_) => "E_IO",
            Error::Json(_) => "E_JSON",
        }
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
