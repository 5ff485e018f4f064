use std::fmt;

/// Exit-code classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Failure {
    Validation,
    Numerical,
    Io,
}

#[derive(Debug)]
pub struct CliError {
    pub class: Failure,
    /// Pipeline stage that failed, if any.
    pub stage: Option<String>,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        CliError { class: Failure::Validation, stage: None, message: message.into() }
    }

    pub fn io(message: impl Into<String>) -> Self {
        CliError { class: Failure::Io, stage: None, message: message.into() }
    }

    pub fn at_stage(mut self, stage: &str) -> Self {
        self.stage.get_or_insert_with(|| stage.to_string());
        self
    }

    pub fn exit_code(&self) -> u8 {
        match self.class {
            Failure::Validation => 2,
            Failure::Numerical => 3,
            Failure::Io => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.stage {
            Some(stage) => write!(f, "stage `{stage}`: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for CliError {}

impl From<spegarch::Error> for CliError {
    fn from(e: spegarch::Error) -> Self {
        let class = if e.is_numerical() {
            Failure::Numerical
        } else if e.is_io() {
            Failure::Io
        } else {
            Failure::Validation
        };
        CliError { class, stage: None, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::io(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
