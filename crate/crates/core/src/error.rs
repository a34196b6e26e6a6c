use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unknown {kind} `{name}`; available: {}", available.join(", "))]
    NotFound {
        kind: &'static str,
        name: String,
        available: Vec<String>,
    },

    #[error("non-finite value {value} for particle {particle} at step {step}")]
    NonFinite {
        step: usize,
        particle: usize,
        value: f64,
    },

    #[error("error at index {index} is not positive ({value}); cannot fit a log-log rate")]
    NonPositiveError { index: usize, value: f64 },

    #[error("empty input")]
    EmptyInput,

    #[error("missing derivative: {0}")]
    MissingDerivative(String),

    #[error("{0}")]
    Domain(String),

    #[error("enumeration of {size} tuples exceeds the limit of {limit}")]
    TooLarge { size: u128, limit: u128 },

    #[error("integer overflow while computing {0}")]
    Overflow(String),
}
