use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in input tensor at flat index {index}")]
    NonFiniteInput { index: usize },

    #[error("non-finite value produced by node {node} ({op})")]
    NonFiniteValue { node: usize, op: &'static str },

    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op} takes {expected} operand(s), got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("unsupported op `{0}`")]
    UnsupportedOp(String),

    #[error("node {0} does not belong to this graph")]
    UnknownNode(usize),

    #[error("parameter layout error: {0}")]
    Layout(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("cross pairing is undefined for {0}")]
    Pairing(String),

    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {msg}")]
    Format { path: String, msg: String },

    #[error("training aborted at iteration {iteration} (first task seed {task_seed}): {source}")]
    Training {
        iteration: usize,
        task_seed: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for failures caused by numerics rather than by configuration or IO.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::NonFiniteInput { .. } | Error::NonFiniteValue { .. } => true,
            Error::Training { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}
