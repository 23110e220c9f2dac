use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("column '{0}' not found")]
    MissingColumn(String),
    #[error("line {line}, column '{column}': cannot parse '{value}' as a number")]
    Parse { line: u64, column: String, value: String },
    #[error("no complete rows remain for feature '{feature}' ({rows} rows read)")]
    EmptyData { feature: String, rows: usize },
    #[error("{0}")]
    Spec(String),
    #[error(transparent)]
    Core(#[from] palmrt::Error),
}

impl CliError {
    /// 3 for internal-consistency failures, 2 for everything the user can fix.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_internal() => 3,
            _ => 2,
        }
    }
}
