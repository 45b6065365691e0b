use std::fmt;

use voxfit_core::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Usage,
    Config,
    Data,
    Runtime,
}

impl ExitKind {
    pub fn code(self) -> i32 {
        match self {
            ExitKind::Usage => 1,
            ExitKind::Config => 2,
            ExitKind::Data => 3,
            ExitKind::Runtime => 4,
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: ExitKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(ExitKind::Usage, message)
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(ExitKind::Config, message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new(ExitKind::Data, message)
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self::new(ExitKind::Runtime, message)
    }

    pub fn exit_code(&self) -> i32 {
        self.kind.code()
    }

    pub fn context(mut self, what: impl fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let kind = match e.root() {
            Error::Config(_) | Error::Polarity(_) | Error::Comparison(_) | Error::Name(_) | Error::Validation(_) => {
                ExitKind::Config
            }
            Error::Io { .. }
            | Error::Format(_)
            | Error::Unsupported(_)
            | Error::Shape(_)
            | Error::Parse { .. }
            | Error::Schema(_)
            | Error::Geometry(_)
            | Error::Dimension { .. }
            | Error::Input(_)
            | Error::InsufficientData { .. }
            | Error::EmptySelection { .. } => ExitKind::Data,
            _ => ExitKind::Runtime,
        };
        CliError::new(kind, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::runtime(e.to_string())
    }
}
