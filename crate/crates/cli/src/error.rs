use std::fmt;

use serde::Serialize;
use sitebal_core::{BalanceError, QpStatus};

/// Everything that can end a run. Usage errors exit with 2, the rest with 1.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config documents or flag combinations.
    Usage(String),
    /// Unreadable files, schema violations and invalid data.
    Input(String),
    /// The weight solver stopped without an optimal solution.
    Solver { status: QpStatus, message: String },
    /// Any other failure inside the library.
    Runtime(String),
}

#[derive(Serialize)]
struct Record<'a> {
    error: Body<'a>,
}

#[derive(Serialize)]
struct Body<'a> {
    kind: &'a str,
    message: &'a str,
    exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    status: Option<String>,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Input(_) => "input",
            CliError::Solver { .. } => "solver",
            CliError::Runtime(_) => "runtime",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Input(m) | CliError::Runtime(m) => m,
            CliError::Solver { message, .. } => message,
        }
    }

    /// One-line JSON error record for stderr.
    pub fn record(&self) -> String {
        let status = match self {
            CliError::Solver { status, .. } => Some(status.to_string()),
            _ => None,
        };
        let rec = Record {
            error: Body {
                kind: self.kind(),
                message: self.message(),
                exit_code: self.exit_code(),
                status,
            },
        };
        serde_json::to_string(&rec).expect("error record serializes")
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind(), self.message())
    }
}

impl From<BalanceError> for CliError {
    fn from(e: BalanceError) -> Self {
        match e {
            BalanceError::SolverFailed { status, .. } => CliError::Solver {
                status,
                message: e.to_string(),
            },
            BalanceError::ModeMismatch(_) => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

macro_rules! runtime_from {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Runtime(e.to_string())
            }
        })*
    };
}

runtime_from!(
    sitebal_core::FeatureError,
    sitebal_core::MultisiteError,
    sitebal_core::HeterogeneityError,
    sitebal_core::SimError,
    sitebal_core::EstimatorError
);

impl From<sitebal_core::ModelError> for CliError {
    fn from(e: sitebal_core::ModelError) -> Self {
        CliError::Input(e.to_string())
    }
}
