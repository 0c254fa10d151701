use thiserror::Error;

/// Failures of a CLI verb, grouped by the exit code they produce.
#[derive(Debug, Error)]
pub enum AppError {
    /// Bad flags or arguments.
    #[error("{0}")]
    Usage(String),

    /// Missing, unreadable or invalid input data, configs or artifacts.
    #[error("{0}")]
    Data(String),

    /// Anything that went wrong while running: training, serving, I/O on
    /// outputs.
    #[error("{0}")]
    Runtime(String),
}

impl AppError {
    /// Process exit code: 1 usage, 2 data, 3 runtime.
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Usage(_) => 1,
            AppError::Data(_) => 2,
            AppError::Runtime(_) => 3,
        }
    }

    pub fn data(msg: impl std::fmt::Display) -> Self {
        AppError::Data(msg.to_string())
    }

    pub fn runtime(msg: impl std::fmt::Display) -> Self {
        AppError::Runtime(msg.to_string())
    }
}

impl From<uwintent_core::Error> for AppError {
    fn from(e: uwintent_core::Error) -> Self {
        use uwintent_core::Error as E;
        match e {
            E::Io { .. }
            | E::Parse { .. }
            | E::Validation(_)
            | E::UnsupportedFormat(_)
            | E::InvalidArgument(_)
            | E::Wav(_)
            | E::Json(_) => AppError::Data(e.to_string()),
            E::Training(_) | E::Numeric(_) | E::Contract(_) | E::Unsupported(_) => AppError::Runtime(e.to_string()),
        }
    }
}

pub type AppResult<T> = Result<T, AppError>;
