//! CLI-level errors. Every failure surfaces as exactly one line of the
//! form `code: message`, the code being a stable kebab-case identifier a
//! wrapper script can dispatch on.

use std::fmt;
use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug)]
pub enum CliError {
    Core(stforge_core::Error),
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    Json {
        path: PathBuf,
        msg: String,
    },
    /// A binary or structured file violates its format contract.
    Format {
        path: PathBuf,
        msg: String,
    },
    /// A TSV line that does not parse; `line` is 1-based.
    Line {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    Locked {
        path: PathBuf,
    },
    Exists {
        path: PathBuf,
    },
    /// Run directory already carries a different effective config.
    ConfigMismatch {
        path: PathBuf,
    },
    /// A recorded input file changed its hash between subcommands.
    InputChanged {
        path: PathBuf,
    },
    Usage {
        msg: String,
    },
    /// A pipeline stage failed; the inner error says why.
    Stage {
        stage: String,
        source: Box<CliError>,
    },
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Core(e) => match e {
                stforge_core::Error::ShapeMismatch { .. } => "shape-mismatch",
                stforge_core::Error::BadArgument { .. } => "bad-argument",
                stforge_core::Error::NonFinite { .. } => "non-finite",
                stforge_core::Error::EmptyCorpus => "empty-corpus",
                stforge_core::Error::MissingAlignment { .. } => "missing-alignment",
                stforge_core::Error::ThresholdTooHigh { .. } => "threshold-too-high",
                stforge_core::Error::VocabMismatch { .. } => "vocab-mismatch",
                stforge_core::Error::ParamMismatch { .. } => "param-mismatch",
                stforge_core::Error::NonFiniteGrad { .. } => "non-finite-grad",
                stforge_core::Error::BackwardAlreadyRun => "backward-already-run",
                stforge_core::Error::TrainingDiverged { .. } => "training-diverged",
            },
            CliError::Io { .. } => "io",
            CliError::Json { .. } => "json-parse",
            CliError::Format { .. } => "bad-format",
            CliError::Line { .. } => "bad-line",
            CliError::Locked { .. } => "run-locked",
            CliError::Exists { .. } => "output-exists",
            CliError::ConfigMismatch { .. } => "config-mismatch",
            CliError::InputChanged { .. } => "input-changed",
            CliError::Usage { .. } => "usage",
            CliError::Stage { .. } => "stage-failed",
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: ", self.code())?;
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::Json { path, msg } => write!(f, "{}: {msg}", path.display()),
            CliError::Format { path, msg } => write!(f, "{}: {msg}", path.display()),
            CliError::Line { path, line, msg } => {
                write!(f, "{}:{line}: {msg}", path.display())
            }
            CliError::Locked { path } => write!(
                f,
                "{} is owned by another process (remove the lock file if that process is gone)",
                path.display()
            ),
            CliError::Exists { path } => write!(
                f,
                "{} already exists; pass --force to overwrite",
                path.display()
            ),
            CliError::ConfigMismatch { path } => write!(
                f,
                "{} holds a different effective config; pass --force to replace it",
                path.display()
            ),
            CliError::InputChanged { path } => write!(
                f,
                "input {} changed since it was first recorded in this run",
                path.display()
            ),
            CliError::Usage { msg } => write!(f, "{msg}"),
            CliError::Stage { stage, source } => write!(f, "stage '{stage}': {source}"),
        }
    }
}

impl std::error::Error for CliError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            CliError::Io { source, .. } => Some(source),
            CliError::Stage { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl From<stforge_core::Error> for CliError {
    fn from(e: stforge_core::Error) -> Self {
        CliError::Core(e)
    }
}

/// Attach the path an io operation was touching.
pub fn io_err(path: &std::path::Path, source: std::io::Error) -> CliError {
    CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}
