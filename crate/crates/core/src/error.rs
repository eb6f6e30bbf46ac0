use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid weighting matrix: {0}")]
    InvalidWeights(String),

    #[error("invalid battery thresholds: {0}")]
    InvalidThresholds(String),

    #[error("unknown scheme `{0}`")]
    UnknownScheme(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("expected lifetime is unbounded: net drain {drain:e} W is not positive")]
    InfiniteLifetime { drain: f64 },

    #[error("no power up to {cap} W reaches the target lifetime")]
    Unachievable { cap: f64 },

    #[error("all {0} runs were censored")]
    AllCensored(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
