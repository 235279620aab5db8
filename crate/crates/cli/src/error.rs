use thiserror::Error;

/// Failures of a CLI run, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(mfpmp::Error),

    #[error("cannot write output: {0}")]
    Output(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) | CliError::Output(_) => 3,
        }
    }
}

impl From<mfpmp::Error> for CliError {
    fn from(e: mfpmp::Error) -> Self {
        use mfpmp::Error as E;
        match e {
            E::InvalidMeasure(_)
            | E::Dimension(_)
            | E::ZeroMass
            | E::GridMismatch(_)
            | E::InvalidControl(_)
            | E::Config(_)
            | E::Csv(_)
            | E::Io(_) => CliError::Config(e.to_string()),
            other => CliError::Numerical(other),
        }
    }
}
