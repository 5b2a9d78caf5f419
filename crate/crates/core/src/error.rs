use std::path::PathBuf;

use crate::capture::AttentionSite;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("input error: {0}")]
    Input(String),

    /// An error raised while processing one attention site.
    #[error("at site {site}: {source}")]
    Site {
        site: AttentionSite,
        #[source]
        source: Box<Error>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("incomplete session: no capture for site {0}")]
    Incomplete(AttentionSite),

    #[error("unknown token `{token}`; valid tokens: {valid}")]
    UnknownToken { token: String, valid: String },

    #[error("unsupported capture version `{found}` (reader supports `{supported}`)")]
    Version { found: String, supported: String },

    #[error("truncated blob {}: expected {expected} bytes, found {found}", path.display())]
    TruncatedBlob {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("oversized blob {}: expected {expected} bytes, found {found}", path.display())]
    OversizedBlob {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("missing file {}", path.display())]
    MissingFile { path: PathBuf },

    #[error("malformed manifest: {0}")]
    Manifest(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    SampleRateMismatch(u32, u32),

    #[error("backend error: {0}")]
    Backend(String),

    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable short code, used by the CLI and service for machine-readable errors.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Range(_) => "range",
            Error::NonFinite(_) => "non_finite",
            Error::Input(_) => "input",
            Error::Site { source, .. } => source.code(),
            Error::Config(_) => "config",
            Error::Incomplete(_) => "incomplete",
            Error::UnknownToken { .. } => "unknown_token",
            Error::Version { .. } => "version",
            Error::TruncatedBlob { .. } => "truncated_blob",
            Error::OversizedBlob { .. } => "oversized_blob",
            Error::MissingFile { .. } => "missing_file",
            Error::Manifest(_) => "manifest",
            Error::UndefinedCorrelation(_) => "undefined_correlation",
            Error::DegenerateInput(_) => "degenerate_input",
            Error::SampleRateMismatch(..) => "sample_rate",
            Error::Backend(_) => "backend",
            Error::Wav(_) => "wav",
            Error::Json(_) => "json",
            Error::Io(_) => "io",
        }
    }

    pub(crate) fn at_site(self, site: &AttentionSite) -> Error {
        match self {
            e @ Error::Site { .. } => e,
            other => Error::Site {
                site: site.clone(),
                source: Box::new(other),
            },
        }
    }
}
