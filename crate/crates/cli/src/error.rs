use std::fmt;

use scalelaw_core::allocation::AllocationError;
use scalelaw_core::fit_engine::FitError;
use scalelaw_core::hparam_scaling::HparamError;
use scalelaw_core::loss_laws::LossLawError;
use scalelaw_core::run_data::RunDataError;
use scalelaw_core::synthgen::SynthError;

/// How a failure maps onto the process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    /// Bug or environment failure (exit 1).
    Internal,
    /// Bad input or violated precondition (exit 2).
    Input,
    /// The analysis ran but declined to produce a result (exit 3).
    Refused,
}

impl ExitKind {
    pub fn code(self) -> i32 {
        match self {
            ExitKind::Internal => 1,
            ExitKind::Input => 2,
            ExitKind::Refused => 3,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn input(error: impl Into<anyhow::Error>) -> Self {
        Self {
            kind: ExitKind::Input,
            error: error.into(),
        }
    }

    pub fn internal(error: impl Into<anyhow::Error>) -> Self {
        Self {
            kind: ExitKind::Internal,
            error: error.into(),
        }
    }

    pub fn refused(error: impl Into<anyhow::Error>) -> Self {
        Self {
            kind: ExitKind::Refused,
            error: error.into(),
        }
    }

    pub fn context(self, what: impl fmt::Display + Send + Sync + 'static) -> Self {
        Self {
            kind: self.kind,
            error: self.error.context(what),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn fit_kind(e: &FitError) -> ExitKind {
    match e {
        FitError::NotConverged => ExitKind::Refused,
        FitError::InvalidProblem(_) => ExitKind::Internal,
        _ => ExitKind::Input,
    }
}

impl From<RunDataError> for CliError {
    fn from(e: RunDataError) -> Self {
        match e {
            RunDataError::Io(_) => CliError::internal(e),
            _ => CliError::input(e),
        }
    }
}

impl From<LossLawError> for CliError {
    fn from(e: LossLawError) -> Self {
        let kind = match &e {
            LossLawError::Fit(f) => fit_kind(f),
            _ => ExitKind::Input,
        };
        CliError { kind, error: e.into() }
    }
}

impl From<AllocationError> for CliError {
    fn from(e: AllocationError) -> Self {
        match e {
            AllocationError::Law(inner) => inner.into(),
            other => CliError::input(other),
        }
    }
}

impl From<HparamError> for CliError {
    fn from(e: HparamError) -> Self {
        let kind = match &e {
            HparamError::UnbracketedMinima { .. } => ExitKind::Refused,
            HparamError::Fit(f) => fit_kind(f),
            _ => ExitKind::Input,
        };
        CliError { kind, error: e.into() }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::input(e)
    }
}
