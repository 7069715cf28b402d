use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum DrmlError {
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("{role} not binary: column `{column}` row {row} has value `{value}`")]
    NotBinary {
        role: &'static str,
        column: String,
        row: usize,
        value: String,
    },

    #[error("column `{column}` row {row}: cannot parse `{value}` as a number")]
    Parse {
        column: String,
        row: usize,
        value: String,
    },

    #[error("missing value in column `{column}` at row {row}")]
    MissingValue { column: String, row: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("constant instrument: raw instrument has no variation")]
    ConstantInstrument,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("weak instrument: |Delta_hat| = {delta:.6} below floor {floor}")]
    WeakInstrument { delta: f64, floor: f64 },

    #[error("rank-deficient design: {0}")]
    RankDeficient(String),

    #[error("propensity {0} outside (0, 1)")]
    PropensityOutOfRange(f64),

    #[error("monotonicity violated by the treatment model at x1={x1}, x2={x2}, u={u}")]
    MonotonicityViolation { x1: f64, x2: f64, u: f64 },

    #[error("no compliers among {0} Monte Carlo draws")]
    NoCompliers(usize),
}

impl DrmlError {
    /// True for errors caused by bad user input (files, config, schema).
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            DrmlError::FileNotFound(_)
                | DrmlError::Io { .. }
                | DrmlError::Csv(_)
                | DrmlError::Config(_)
                | DrmlError::MissingColumn(_)
                | DrmlError::NotBinary { .. }
                | DrmlError::Parse { .. }
                | DrmlError::MissingValue { .. }
                | DrmlError::EmptyDataset
        )
    }

    /// Stable snake_case identifier for machine-readable error records.
    pub fn kind(&self) -> &'static str {
        match self {
            DrmlError::FileNotFound(_) => "file_not_found",
            DrmlError::Io { .. } => "io",
            DrmlError::Csv(_) => "csv",
            DrmlError::Config(_) => "config",
            DrmlError::MissingColumn(_) => "missing_column",
            DrmlError::NotBinary { .. } => "not_binary",
            DrmlError::Parse { .. } => "parse",
            DrmlError::MissingValue { .. } => "missing_value",
            DrmlError::EmptyDataset => "empty_dataset",
            DrmlError::ConstantInstrument => "constant_instrument",
            DrmlError::Dimension(_) => "dimension",
            DrmlError::InvalidArgument(_) => "invalid_argument",
            DrmlError::WeakInstrument { .. } => "weak_instrument",
            DrmlError::RankDeficient(_) => "rank_deficient",
            DrmlError::PropensityOutOfRange(_) => "propensity_out_of_range",
            DrmlError::MonotonicityViolation { .. } => "monotonicity_violation",
            DrmlError::NoCompliers(_) => "no_compliers",
        }
    }

    /// Process exit status: 2 for input errors, 1 for estimation errors.
    pub fn exit_code(&self) -> i32 {
        if self.is_input_error() {
            2
        } else {
            1
        }
    }
}

pub type Result<T> = std::result::Result<T, DrmlError>;
