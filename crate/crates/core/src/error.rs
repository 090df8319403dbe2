use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("{0}: non-finite value encountered")]
    NonFinite(&'static str),

    #[error("uninitialized running stats")]
    UninitializedRunningStats,

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("training diverged at step {step}: non-finite loss or gradient")]
    Diverged { step: u64 },

    #[error("attention dump refused: N = {frames} exceeds the dump limit {limit}; shorten the input or raise the limit")]
    DumpLimit { frames: usize, limit: usize },
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidArgument {
            op,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
