use std::path::PathBuf;

use thiserror::Error;

use crate::leg::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("joint configuration outside limits: {}", format_violations(.0))]
    JointLimits(Vec<Violation>),

    #[error("degenerate pose: pendulum length {length:.3e} m is below the {floor:.1e} m floor")]
    DegeneratePose { length: f64, floor: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singular wheel/pendulum mass matrix (det = {0:e})")]
    SingularMassMatrix(f64),

    #[error("non-finite state encountered during integration")]
    NonFiniteState,

    #[error("Riccati iteration did not converge after {iterations} iterations (last step {last_step:e}); system is not stabilizable")]
    Unstabilizable { iterations: usize, last_step: f64 },

    #[error("invalid LQR weights: {0}")]
    Weights(String),

    #[error("length mismatch: {states} states vs {inputs} inputs")]
    LengthMismatch { states: usize, inputs: usize },

    #[error("sensor stream out of order: sample at t = {got} s follows t = {previous} s")]
    StreamOrder { previous: f64, got: f64 },

    #[error("empty signal")]
    EmptySignal,

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("training diverged at iteration {iteration}: {detail}")]
    TrainingDiverged { iteration: usize, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::JointLimits(_)
                | Error::InvalidParameter(_)
                | Error::Weights(_)
                | Error::Scenario(_)
                | Error::Io { .. }
                | Error::Parse { .. }
                | Error::LengthMismatch { .. }
        )
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
