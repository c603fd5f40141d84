use thiserror::Error;

use crate::backends::BackendError;
use crate::geometry::GeometryError;
use crate::prompts::PromptError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("segmenter returned no candidates")]
    NoCandidates,
    #[error("chat session is busy")]
    SessionBusy,
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
