use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("invalid config field `{field}`: {msg}")]
    Config { field: String, msg: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("attribute `{attribute}` has degenerate labels: {msg}")]
    DegenerateLabels { attribute: String, msg: String },

    #[error("no place has at least {min_visitors} distinct visitors")]
    NoEligiblePlaces { min_visitors: usize },

    #[error(
        "singular normal equations while solving {side} {index}; use lambda > 0 \
         (current lambda = {lambda})"
    )]
    Singular {
        side: &'static str,
        index: usize,
        lambda: f64,
    },

    #[error("training diverged (non-finite loss at epoch {epoch}); lower the learning rate (currently {learning_rate})")]
    Diverged { epoch: usize, learning_rate: f64 },

    #[error("too few examples for stratified {k}-fold split: {n_pos} positive, {n_neg} negative")]
    TooFewExamples { k: usize, n_pos: usize, n_neg: usize },

    #[error("feature name collision: `{0}` present in both sources")]
    FeatureCollision(String),

    #[error("empty class `{class}` for attribute `{attribute}`")]
    EmptyClass { attribute: String, class: &'static str },

    #[error("{0}")]
    Format(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            msg: msg.into(),
        }
    }

    /// Short stable identifier, used by the CLI's machine-readable error line.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Parse { .. } => "parse",
            Error::Config { .. } => "config",
            Error::Validation(_) => "validation",
            Error::DegenerateLabels { .. } => "degenerate_labels",
            Error::NoEligiblePlaces { .. } => "no_eligible_places",
            Error::Singular { .. } => "singular",
            Error::Diverged { .. } => "diverged",
            Error::TooFewExamples { .. } => "too_few_examples",
            Error::FeatureCollision(_) => "feature_collision",
            Error::EmptyClass { .. } => "empty_class",
            Error::Format(_) => "format",
        }
    }
}
