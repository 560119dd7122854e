use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid outcome: {0}")]
    InvalidOutcome(String),

    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("invalid valuation: {0}")]
    InvalidValuation(String),

    #[error("invalid bid grid: {0}")]
    InvalidGrid(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error in `{field}`: {message}")]
    Validation { field: String, message: String },

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("value {value} outside declared range [-{range}, {range}]")]
    Range { value: f64, range: f64 },

    #[error("enumeration budget exceeded: {what} needs {needed} terms, budget is {budget}")]
    Budget {
        what: String,
        needed: u128,
        budget: u128,
    },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn budget(what: impl Into<String>, needed: u128, budget: u128) -> Self {
        Error::Budget {
            what: what.into(),
            needed,
            budget,
        }
    }

    pub(crate) fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            message: message.into(),
        }
    }
}

/// Returns a budget error when `needed > budget`.
pub(crate) fn check_budget(what: &str, needed: u128, budget: u128) -> Result<()> {
    if needed > budget {
        Err(Error::budget(what, needed, budget))
    } else {
        Ok(())
    }
}
