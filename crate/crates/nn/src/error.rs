use thiserror::Error;

pub type Result<T, E = NnError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("contract error: {0}")]
    Contract(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl NnError {
    pub(crate) fn shape_mismatch(a: [usize; 2], b: [usize; 2]) -> Self {
        NnError::Shape(format!("{a:?} is incompatible with {b:?}"))
    }
}
