use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("could not place {objects} objects after {attempts} attempts")]
    Placement { objects: usize, attempts: usize },
    #[error("no unambiguous description for object {target} in scene {scene}")]
    Ambiguous { scene: usize, target: usize },
    #[error("instruction does not parse: {0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: malformed image: {detail}")]
    Image { path: PathBuf, detail: String },
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error("vocabulary mismatch: {0}")]
    Vocab(String),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> DatasetError {
    let path = path.into();
    move |source| DatasetError::Io { path, source }
}
