use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("storm {storm_id} (header at line {line}): {message}")]
    Header {
        storm_id: String,
        line: usize,
        message: String,
    },

    #[error("invalid split request: {0}")]
    Split(String),

    #[error("node ({qlat}, {qlon}) is not in the graph")]
    UnknownNode { qlat: i32, qlon: i32 },

    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    /// `batch` is `None` for the validation pass.
    #[error(
        "non-finite loss at epoch {epoch}, {}",
        batch.map_or("validation".to_string(), |b| format!("batch {b}"))
    )]
    NonFiniteLoss { epoch: usize, batch: Option<usize> },

    #[error("all-padded sequence at batch row {0}")]
    EmptySequence(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty prefix")]
    EmptyPrefix,

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("missing parameter `{0}`")]
    MissingParameter(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },

    #[error("checkpoint integrity: {0}")]
    Integrity(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
