use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {context}: {source}")]
    Csv {
        context: String,
        #[source]
        source: csv::Error,
    },

    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("empty table: {0}")]
    EmptyTable(String),

    #[error("ragged row {row}: expected {expected} cells, found {found}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("missing value in row {row}, column '{column}'")]
    MissingValue { row: usize, column: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid label: {0}")]
    Label(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("singular linear system in {0}")]
    Singular(&'static str),

    #[error("missing attributions: {0}")]
    MissingAttributions(String),

    #[error("undefined correlation: {0}")]
    Undefined(String),

    #[error("stage '{stage}' failed{}{}: {source}",
        epoch.map(|e| format!(" at epoch {e}")).unwrap_or_default(),
        instance.map(|i| format!(" on instance {i}")).unwrap_or_default())]
    Stage {
        stage: &'static str,
        epoch: Option<usize>,
        instance: Option<usize>,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str, epoch: Option<usize>, instance: Option<usize>) -> Self {
        Error::Stage {
            stage,
            epoch,
            instance,
            source: Box::new(self),
        }
    }
}
