use thiserror::Error;

/// A potential-outcome cell `(unit_id, arm)` that the null hypothesis does not pin down.
pub type Cell = (u64, u8);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("infeasible assignment: {0}")]
    InfeasibleAssignment(String),

    #[error("not imputable: {} unknown cell(s), first {:?}", .cells.len(), .cells.first())]
    NotImputable { cells: Vec<Cell> },

    #[error("assignment space too large: {0} assignments")]
    SpaceTooLarge(u128),

    #[error("rejection budget exhausted after accepting {0} draws")]
    BudgetExhausted(usize),

    #[error("degenerate variance in standardized effect")]
    DegenerateVariance,

    #[error("empty arm {arm} in group")]
    EmptyArm { arm: u8 },

    #[error("zero denominator in relative risk")]
    ZeroDenominator,

    #[error("chain too short: need at least 2 states, got {0}")]
    ChainTooShort(usize),

    #[error("p-value does not bracket alpha at the endpoints ({lo_p} at lo, {hi_p} at hi)")]
    NoBracket { lo_p: f64, hi_p: f64 },

    #[error("estimator undefined: no grid point with p {side} 1/2")]
    Undefined { side: &'static str },

    #[error("insufficient units: need {needed}, have {available}")]
    InsufficientUnits { needed: usize, available: usize },

    #[error("invalid trial spec: {0}")]
    Spec(String),

    #[error("invalid trial data: {0}")]
    Data(String),

    #[error("data schema error at row {row}, column {column}: {message}")]
    DataSchema {
        row: usize,
        column: String,
        message: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Stable machine-readable error code.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InfeasibleAssignment(_) => "InfeasibleAssignment",
            Error::NotImputable { .. } => "NotImputable",
            Error::SpaceTooLarge(_) => "SpaceTooLarge",
            Error::BudgetExhausted(_) => "BudgetExhausted",
            Error::DegenerateVariance => "DegenerateVariance",
            Error::EmptyArm { .. } => "EmptyArm",
            Error::ZeroDenominator => "ZeroDenominator",
            Error::ChainTooShort(_) => "ChainTooShort",
            Error::NoBracket { .. } => "NoBracket",
            Error::Undefined { .. } => "Undefined",
            Error::InsufficientUnits { .. } => "InsufficientUnits",
            Error::Spec(_) => "SpecParseError",
            Error::Data(_) => "DataError",
            Error::DataSchema { .. } => "DataSchemaError",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::Io(_) => "IoError",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
