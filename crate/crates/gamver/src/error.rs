use std::path::{Path, PathBuf};

use gamver_core::forest::ForestError;
use gamver_core::gradcam::CamError;
use gamver_core::simmetrics::MetricError;
use gamver_core::synth::SynthError;
use gamver_core::tinynet::NetError;
use gamver_core::verifier::VerifyError;
use gamver_core::TensorError;
use thiserror::Error;

/// Exit code for a run that completed.
pub const EXIT_OK: i32 = 0;
/// Exit code for invalid flags, configs or input files.
pub const EXIT_VALIDATION: i32 = 2;
/// Exit code when the data is too degenerate to continue (e.g. a class with no usable samples).
pub const EXIT_DEGENERATE: i32 = 3;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Cam(#[from] CamError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

fn forest_degenerate(e: &ForestError) -> bool {
    matches!(e, ForestError::SingleClass(_) | ForestError::ClassTooSmall { .. })
}

fn net_degenerate(e: &NetError) -> bool {
    matches!(e, NetError::Diverged { .. })
}

impl CoreError {
    pub fn is_degenerate(&self) -> bool {
        match self {
            CoreError::Verify(v) => match v {
                VerifyError::EmptyClass(_) => true,
                VerifyError::Forest(f) => forest_degenerate(f),
                VerifyError::Net(n) => net_degenerate(n),
                _ => false,
            },
            CoreError::Forest(f) => forest_degenerate(f),
            CoreError::Net(n) => net_degenerate(n),
            _ => false,
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error("invalid --{name}: {message}")]
    Param { name: String, message: String },
    #[error("{context}: {source}")]
    Core { context: String, source: CoreError },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core { source, .. } if source.is_degenerate() => EXIT_DEGENERATE,
            _ => EXIT_VALIDATION,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, message: impl Into<String>) -> Self {
        CliError::Format {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }

    pub fn param(name: &str, message: impl Into<String>) -> Self {
        CliError::Param {
            name: name.to_string(),
            message: message.into(),
        }
    }
}

/// Attaches a description of what was being done to a core error.
pub trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T, CliError>;
}

impl<T, E: Into<CoreError>> Context<T> for Result<T, E> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T, CliError> {
        self.map_err(|e| CliError::Core {
            context: what(),
            source: e.into(),
        })
    }
}
