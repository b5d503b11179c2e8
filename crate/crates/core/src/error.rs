use std::fmt;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error in {op}: {lhs} vs {rhs}")]
    Shape {
        op: &'static str,
        lhs: ShapeDisplay,
        rhs: ShapeDisplay,
    },
    #[error("invalid mask: row {row} has no unmasked entry")]
    InvalidMask { row: usize },
    #[error("lookup error: index {index} out of range for {table} (size {size})")]
    Lookup {
        table: String,
        index: usize,
        size: usize,
    },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("state error: {0}")]
    State(String),
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: ShapeDisplay(lhs.to_vec()),
            rhs: ShapeDisplay(rhs.to_vec()),
        }
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

/// Shape wrapper so errors print as `[2x3]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeDisplay(pub Vec<usize>);

impl fmt::Display for ShapeDisplay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dims: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        write!(f, "[{}]", dims.join("x"))
    }
}
