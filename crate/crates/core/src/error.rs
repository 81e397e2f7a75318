use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed volume file: {0}")]
    Format(String),
    #[error("value out of range: {value} at index {index}")]
    ValueOutOfRange { index: usize, value: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("edge ({0}, {1}) is not in the graph")]
    EdgeAbsent(u64, u64),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("single-class training set (all labels {0})")]
    SingleClass(i8),
    #[error("model format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("feature map mismatch: {0}")]
    FeatureMismatch(String),
    #[error("edge ({0}, {1}) has an impure endpoint during guided training")]
    ImpureNode(u64, u64),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
