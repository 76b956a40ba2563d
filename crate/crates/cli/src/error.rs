use thiserror::Error;

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const NON_CONVERGENCE: i32 = 3;
    pub const IO: i32 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("{0}")]
    Core(#[from] csbeam::Error),

    #[error("I/O error: {0}")]
    Io(String),

    /// Outputs were written, but some solve did not converge or failed.
    #[error("{0}")]
    CellsFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => exit::CONFIG,
            CliError::Io(_) => exit::IO,
            CliError::CellsFailed(_) => exit::NON_CONVERGENCE,
            CliError::Core(e) => core_exit_code(e),
        }
    }
}

pub fn core_exit_code(e: &csbeam::Error) -> i32 {
    use csbeam::Error as E;
    match e {
        E::Io(_) => exit::IO,
        E::InfeasibleNonneg { .. } => exit::NON_CONVERGENCE,
        _ => exit::CONFIG,
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
