use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A file header or container is malformed.
    #[error("format error: {0}")]
    Format(String),
    /// File contents are well-formed but the values violate an invariant.
    #[error("data error: {0}")]
    Data(String),
    /// Operand shapes are incompatible.
    #[error("shape error: {0}")]
    Shape(String),
    /// An API precondition was violated by the caller.
    #[error("contract error: {0}")]
    Contract(String),
    /// A configuration value is out of range.
    #[error("config error: {0}")]
    Config(String),
    #[error("degenerate graph: {0}")]
    DegenerateGraph(String),
    /// Training produced a non-finite loss.
    #[error("training diverged: {0}")]
    Divergence(String),
    /// A pipeline stage failed; wraps the underlying error.
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Tags an error with the pipeline stage it came from.
pub fn in_stage<T>(stage: &'static str, result: Result<T>) -> Result<T> {
    result.map_err(|e| match e {
        e @ Error::Stage { .. } => e,
        e => Error::Stage { stage, source: Box::new(e) },
    })
}
