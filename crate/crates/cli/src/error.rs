use thiserror::Error;

/// Pipeline failures, grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    /// Wraps a library error with a short description of the failing step.
    pub fn context(step: &str) -> impl Fn(prevmap::Error) -> CliError + '_ {
        move |e| {
            if e.is_numerical() {
                CliError::Numerical(format!("{step}: {e}"))
            } else {
                CliError::Data(format!("{step}: {e}"))
            }
        }
    }

    pub fn io(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
        move |e| CliError::Data(format!("{}: {e}", path.display()))
    }
}

pub type CliResult<T> = Result<T, CliError>;
