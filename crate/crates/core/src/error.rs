use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchemaError {
    #[error("malformed schema document{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    Parse { line: Option<usize>, message: String },
    #[error("invalid attribute `{attribute}`: {rule}")]
    Validation { attribute: String, rule: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Schema(#[from] SchemaError),

    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },

    #[error("item `{item}`, attribute `{attribute}`: {message}")]
    InvalidValue {
        item: String,
        attribute: String,
        message: String,
    },

    #[error("duplicate item id `{0}`")]
    DuplicateItem(String),

    #[error("line {line}: unknown item `{item}`")]
    UnknownItem { line: usize, item: String },

    #[error("line {line}: bad timestamp: {message}")]
    Timestamp { line: usize, message: String },

    #[error("attribute `{attribute}` has fewer than two distinct values")]
    DegenerateRange { attribute: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("no feasible type split for types={types}, x={attrs_per_type}, y={min_common}, h={attributes}")]
    InfeasibleSplit {
        types: usize,
        attrs_per_type: usize,
        min_common: usize,
        attributes: usize,
    },

    #[error("calibration failed: no computable relative diversity value")]
    Calibration,

    #[error("user `{user}` consulted item `{item}` which is not in the catalog")]
    MissingItem { user: String, item: String },

    #[error("stream for user `{user}` is not sorted by timestamp at position {index}")]
    Unsorted { user: String, index: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
