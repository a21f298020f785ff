use thiserror::Error;

/// Errors raised by scenario validation and by the simulation contracts.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("distribution not normalized: {field} sums to {sum}")]
    NotNormalized { field: String, sum: f64 },

    #[error("negative probability in {field}")]
    NegativeProbability { field: String },

    #[error("CTR out of range: {field} = {value}")]
    CtrOutOfRange { field: String, value: f64 },

    #[error("negative value: {field} = {value}")]
    NegativeValue { field: String, value: f64 },

    #[error("empty clause space")]
    EmptyClauseSpace,

    #[error("clause {clause:#b} references queries outside the query set")]
    InvalidClause { clause: u32 },

    #[error("empty bid grid")]
    EmptyBidGrid,

    #[error("non-increasing bid grid at index {index}")]
    NonIncreasingBidGrid { index: usize },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("config parse error: {0}")]
    Parse(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("trace recording disabled")]
    TraceDisabled,

    #[error("empty sample set")]
    EmptySamples,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
}

impl Error {
    /// Stable machine-readable code for each error class.
    pub fn code(&self) -> &'static str {
        match self {
            Error::NotNormalized { .. } => "distribution_not_normalized",
            Error::NegativeProbability { .. } => "negative_probability",
            Error::CtrOutOfRange { .. } => "ctr_out_of_range",
            Error::NegativeValue { .. } => "negative_value",
            Error::EmptyClauseSpace => "empty_clause_space",
            Error::InvalidClause { .. } => "invalid_clause",
            Error::EmptyBidGrid => "empty_bid_grid",
            Error::NonIncreasingBidGrid { .. } => "non_increasing_bid_grid",
            Error::InvalidScenario(_) => "invalid_scenario",
            Error::Parse(_) => "parse_error",
            Error::Contract(_) => "contract_violation",
            Error::TraceDisabled => "trace_disabled",
            Error::EmptySamples => "empty_samples",
            Error::LengthMismatch { .. } => "length_mismatch",
        }
    }

    /// True for errors caused by bad user input rather than I/O or internal bugs.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Contract(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
