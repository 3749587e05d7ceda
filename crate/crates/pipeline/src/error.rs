use std::path::PathBuf;

use sacl_core::CoreError;
use sacl_tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("manifest error ({id}): {msg}")]
    Manifest { id: String, msg: String },
    #[error("reading CSV {path}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("reading image {path}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("accessing {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("non-finite gradient in {param} at step {step}")]
    NonFinite { param: String, step: usize },
    #[error("degenerate alignment: {0}")]
    Alignment(String),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

pub(crate) fn manifest_err(id: impl Into<String>, msg: impl Into<String>) -> PipelineError {
    PipelineError::Manifest {
        id: id.into(),
        msg: msg.into(),
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> PipelineError {
    let path = path.into();
    move |source| PipelineError::Io { path, source }
}
