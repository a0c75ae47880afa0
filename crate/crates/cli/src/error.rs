use std::fmt;

use bodyshape_core::{MeasureError, MeshError, ModelError, RefineError, SolverError, SynthError};

/// Failure classes, each with its own process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    InputFormat,
    Numerical,
    MeasurementUndefined,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::InputFormat => 2,
            ErrorKind::Numerical => 3,
            ErrorKind::MeasurementUndefined => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::InputFormat => "input_format",
            ErrorKind::Numerical => "numerical",
            ErrorKind::MeasurementUndefined => "measurement_undefined",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn input(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::InputFormat, message)
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Numerical, message)
    }

    /// Prefixes the message with `context` (a file name, usually).
    pub fn context(mut self, context: impl fmt::Display) -> Self {
        self.message = format!("{context}: {}", self.message);
        self
    }
}

/// Single line: `ERROR <code>: <message>`.
impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let msg = self.message.replace('\n', " ");
        write!(f, "ERROR {}: {}", self.kind.as_str(), msg)
    }
}

impl std::error::Error for CliError {}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::input(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::input(format!("invalid JSON: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::input(format!("invalid CSV: {e}"))
    }
}

impl From<MeshError> for CliError {
    fn from(e: MeshError) -> Self {
        match e {
            MeshError::ZeroLengthEdge { .. } => CliError::numerical(e.to_string()),
            _ => CliError::input(e.to_string()),
        }
    }
}

impl From<MeasureError> for CliError {
    fn from(e: MeasureError) -> Self {
        if e.is_undefined() {
            CliError::new(ErrorKind::MeasurementUndefined, e.to_string())
        } else if let MeasureError::Mesh(m) = e {
            m.into()
        } else if matches!(e, MeasureError::NonPositive { .. }) {
            CliError::new(ErrorKind::MeasurementUndefined, e.to_string())
        } else {
            CliError::input(e.to_string())
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::SingularSystem => CliError::numerical(e.to_string()),
            ModelError::Mesh(m) => m.into(),
            _ => CliError::input(e.to_string()),
        }
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        CliError::numerical(e.to_string())
    }
}

impl From<RefineError> for CliError {
    fn from(e: RefineError) -> Self {
        match e {
            RefineError::Measure(m) => m.into(),
            RefineError::Model(m) => m.into(),
            RefineError::Mesh(m) => m.into(),
            RefineError::Solver(s) => s.into(),
            RefineError::InvalidConfig(_) => CliError::input(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Mesh(m) => m.into(),
            SynthError::Measure(m) => m.into(),
            SynthError::NotPositiveDefinite | SynthError::RetryLimit { .. } => {
                CliError::numerical(e.to_string())
            }
            _ => CliError::input(e.to_string()),
        }
    }
}
