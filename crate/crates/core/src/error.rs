use thiserror::Error;

/// Errors raised by the library. Infeasible QPs are a reported state, never an error.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected} {what}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate sample box: {0}")]
    DegenerateBox(String),

    #[error("could not place {n_humans} humans without overlap after {attempts} attempts")]
    PlacementFailed { n_humans: usize, attempts: usize },

    #[error(
        "calibration failed: {clamped} of {total} certificate errors exceed the loss bound \
         ({rate:.4} > {threshold:.4})"
    )]
    ClampRateExceeded {
        clamped: usize,
        total: usize,
        rate: f64,
        threshold: f64,
    },

    #[error("training set spans {batches} batch(es); at least 2 are needed for a validation split")]
    TooFewBatches { batches: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error("variant `{0}` requires a trained margin model")]
    MissingMarginModel(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
