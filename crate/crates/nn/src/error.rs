use thiserror::Error;

pub type Result<T, E = NnError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value in {layer}")]
    NonFinite { layer: String },
    #[error("training diverged at epoch {epoch} (loss {loss:.4e} vs initial {initial:.4e}); try a lower learning rate")]
    Divergence { epoch: usize, loss: f64, initial: f64 },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
