use crate::numerics::NumericsError;

/// Failures of the learnable stages (backbone, modeling, heads).
#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("shape: {0}")]
    Shape(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T, ModelError> {
    Err(ModelError::Config(msg.into()))
}

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T, ModelError> {
    Err(ModelError::Shape(msg.into()))
}
