use crate::corpus::ExampleId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("record {index}: {message}")]
    Record { index: usize, message: String },

    #[error("unresolved slot {0}")]
    UnresolvedSlot(String),

    #[error("separator collision: rendered text of example {0} contains the separator token")]
    SeparatorCollision(ExampleId),

    #[error("unknown example id {0}")]
    UnknownId(ExampleId),

    #[error("query {0} appears among context ids")]
    QueryInContext(ExampleId),

    #[error("class {label} exhausted: need {needed}, have {available}")]
    ClassExhausted {
        label: usize,
        needed: usize,
        available: usize,
    },

    #[error("insufficient examples: need {required}, have {available}")]
    InsufficientExamples { required: usize, available: usize },

    #[error("token budget exceeded: {used} tokens > budget {budget}")]
    BudgetExceeded { used: usize, budget: usize },

    #[error("backend error ({}): {message}", if *.retryable { "retryable" } else { "fatal" })]
    Backend { retryable: bool, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Backend { retryable: true, .. })
    }
}
