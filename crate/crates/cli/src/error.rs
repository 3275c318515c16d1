use thiserror::Error;

/// Process exit status for a successful run.
pub const EXIT_OK: i32 = 0;
/// Bad manifest, configuration, arguments or missing input files.
pub const EXIT_VALIDATION: i32 = 2;
/// A pipeline stage failed while computing.
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Clone, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{verb}: {source}")]
    Pipeline {
        verb: String,
        #[source]
        source: vitalsig::Error,
    },
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) | Self::Io { .. } => EXIT_VALIDATION,
            Self::Pipeline { .. } | Self::Runtime(_) => EXIT_RUNTIME,
        }
    }

    pub fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        Self::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}

/// Input-shaped core errors are validation failures; the rest are numerical.
pub fn from_core(verb: &str, e: vitalsig::Error) -> CliError {
    use vitalsig::Error as E;
    match e {
        E::Io { path, message } => CliError::Io { path, message },
        E::Parse(msg) => CliError::Validation(format!("{verb}: {msg}")),
        other => CliError::Pipeline {
            verb: verb.to_owned(),
            source: other,
        },
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
