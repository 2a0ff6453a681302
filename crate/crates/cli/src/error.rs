use mpenssar::estimator::EstimatorError;
use mpenssar::io::IoError;
use mpenssar::protocol::ProtocolError;
use mpenssar::selection::SelectionError;
use mpenssar::simulation::SimulationError;
use mpenssar::{SignatureError, SpatialError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    pub fn context(self, what: &str) -> Self {
        match self {
            CliError::Config(m) => CliError::Config(format!("{what}: {m}")),
            CliError::Numerical(m) => CliError::Numerical(format!("{what}: {m}")),
            CliError::Io(m) => CliError::Io(format!("{what}: {m}")),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

pub fn io_err(path: &std::path::Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<SimulationError> for CliError {
    fn from(e: SimulationError) -> Self {
        match e {
            SimulationError::InvalidConfig { .. }
            | SimulationError::TooManyUnits { .. }
            | SimulationError::UnknownPreset(_)
            | SimulationError::MissingZ => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<EstimatorError> for CliError {
    fn from(e: EstimatorError) -> Self {
        match e {
            EstimatorError::InvalidLambda(_) | EstimatorError::InvalidInertiaCap(_) | EstimatorError::Dimension(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<SelectionError> for CliError {
    fn from(e: SelectionError) -> Self {
        match e {
            SelectionError::Fit { .. } | SelectionError::DegenerateHeuristic(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<SignatureError> for CliError {
    fn from(e: SignatureError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<SpatialError> for CliError {
    fn from(e: SpatialError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<ProtocolError> for CliError {
    fn from(e: ProtocolError) -> Self {
        match e {
            ProtocolError::Estimator(e) => e.into(),
            ProtocolError::Selection(e) => e.into(),
            ProtocolError::Signature(e) => e.into(),
            ProtocolError::Spatial(e) => e.into(),
            ProtocolError::Config(_) => CliError::Config(e.to_string()),
            ProtocolError::NoCandidate(_) => CliError::Numerical(e.to_string()),
        }
    }
}
