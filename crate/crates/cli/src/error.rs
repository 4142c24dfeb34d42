use std::fmt;

use koopcert_core::Error as CoreError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Simulate,
    Fit,
    Spectrum,
    Certify,
    Predict,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Simulate => "simulate",
            Stage::Fit => "fit",
            Stage::Spectrum => "spectrum",
            Stage::Certify => "certify",
            Stage::Predict => "predict",
            Stage::Output => "output",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: CoreError,
    },
    #[error("certificate inconclusive: margin {margin:.3e} is not positive")]
    Inconclusive { margin: f64 },
}

pub mod exit {
    pub const OK: i32 = 0;
    pub const OTHER: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const BLOW_UP: i32 = 3;
    pub const SOLVER: i32 = 4;
    pub const INCONCLUSIVE: i32 = 5;
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Inconclusive { .. } => exit::INCONCLUSIVE,
            CliError::Stage { source, .. } => match source {
                CoreError::BlowUp { .. } | CoreError::NonFinite { .. } => exit::BLOW_UP,
                CoreError::SingularGram
                | CoreError::Eigensolver(_)
                | CoreError::UnusableRank { .. } => exit::SOLVER,
                CoreError::InvalidArgument(_)
                | CoreError::DimensionMismatch { .. }
                | CoreError::EmptyPointSet
                | CoreError::NotContinuous
                | CoreError::InconsistentDataset(_)
                | CoreError::Format { .. }
                | CoreError::Csv(_)
                | CoreError::Json(_) => exit::CONFIG,
                CoreError::Io(e) if e.kind() == std::io::ErrorKind::NotFound => exit::CONFIG,
                CoreError::Io(_) => exit::OTHER,
            },
        }
    }
}

/// Tags a core result with the stage that produced it.
pub trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, CliError>;
}

impl<T> AtStage<T> for koopcert_core::Result<T> {
    fn at(self, stage: Stage) -> Result<T, CliError> {
        self.map_err(|source| CliError::Stage { stage, source })
    }
}
