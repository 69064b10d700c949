use crate::shape::Shape;

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: expected a rank-{expected} tensor, got shape {shape}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Shape,
    },

    #[error("{op}: dimension `{dim}` mismatch ({lhs} vs {rhs})")]
    DimMismatch {
        op: &'static str,
        dim: &'static str,
        lhs: usize,
        rhs: usize,
    },

    #[error("{op}: incompatible shapes {lhs} and {rhs}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Shape,
        rhs: Shape,
    },

    #[error("buffer of length {len} cannot carry shape {shape}")]
    BufferLength { len: usize, shape: Shape },

    #[error("shape {0:?} has a zero-sized dimension")]
    ZeroDim(Vec<usize>),

    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },

    #[error("backward needs a scalar loss, got shape {0}")]
    NonScalarLoss(Shape),

    #[error("computation record is empty; nothing to differentiate")]
    EmptyRecord,

    #[error("function under gradient check is not deterministic ({first} then {second})")]
    Nondeterministic { first: f64, second: f64 },

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
}

impl TensorError {
    pub fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        TensorError::Invalid {
            op,
            msg: msg.into(),
        }
    }
}
