use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    #[error(transparent)]
    Autograd(#[from] mabn_autograd::AutogradError),
    #[error(transparent)]
    Dataset(#[from] mabn_dataset::DatasetError),
    #[error(transparent)]
    Metrics(#[from] mabn_metrics::MetricsError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("non-finite loss at step {step}; last good checkpoint: {checkpoint}")]
    NonFiniteLoss { step: u64, checkpoint: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, CoreError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CoreError {
    let path = path.into();
    move |source| CoreError::Io { path, source }
}
