use thiserror::Error;

/// CLI failure, mapped onto the process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::Input(_) => 2,
            Self::Calibration(_) => 3,
            Self::Io(_) | Self::Other(_) => 1,
        }
    }
}

impl From<crcsf::Error> for CliError {
    fn from(e: crcsf::Error) -> Self {
        use crcsf::Error as E;
        match e {
            E::ClampRateExceeded { .. } => Self::Calibration(e.to_string()),
            E::InvalidConfig(_)
            | E::DegenerateBox(_)
            | E::UnknownScenario(_)
            | E::PlacementFailed { .. }
            | E::DimensionMismatch { .. } => Self::Config(e.to_string()),
            E::MissingMarginModel(_) | E::TooFewBatches { .. } | E::Empty(_) => Self::Input(e.to_string()),
        }
    }
}
