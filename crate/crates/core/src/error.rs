use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("fusion over an empty input list")]
    EmptyFusion,
    #[error("index {index} out of range (size {size})")]
    Index { index: usize, size: usize },
    #[error("every logit is masked")]
    DegenerateMask,
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("non-finite value encountered in {0}")]
    Numeric(String),
    #[error("edge {from} -> {to} violates the level constraint")]
    LevelConstraint { from: usize, to: usize },
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("training diverged in {stage} at epoch {epoch}, batch {batch} (loss {loss})")]
    Divergence {
        stage: String,
        epoch: usize,
        batch: usize,
        loss: f64,
    },
    #[error("AUC is undefined when only one class is present")]
    SingleClass,
}

impl Error {
    pub(crate) fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
