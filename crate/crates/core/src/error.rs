use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("shape mismatch in {op}: ({}x{}) vs ({}x{})", lhs.0, lhs.1, rhs.0, rhs.1)]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("loss must be scalar, got ({0}x{1})")]
    NonScalarLoss(usize, usize),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("sample off the simplex: |sum - 1| = {0:.3e}")]
    OffSimplex(f64),

    #[error("sample outside the open unit interval: {0}")]
    OutsideUnitInterval(f64),

    #[error("missing values in rows {0:?}")]
    MissingValues(Vec<usize>),

    #[error("non-numeric cell at row {row}, column {col}: {value:?}")]
    NonNumeric {
        row: usize,
        col: String,
        value: String,
    },

    #[error("config invalid:\n{}", issues.join("\n"))]
    Config { issues: Vec<String> },

    #[error("training aborted at epoch {epoch}, step {step}: {source}")]
    TrainingAborted {
        epoch: usize,
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    TomlParse(#[from] toml::de::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(issues: Vec<String>) -> Self {
        Error::Config { issues }
    }
}
