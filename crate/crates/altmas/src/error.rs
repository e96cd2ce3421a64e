use std::path::PathBuf;

/// Crate-wide error type. Variants are grouped by the process exit code they
/// map to: configuration problems (1), file/format problems (2) and numeric
/// or bookkeeping failures (3).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("{path}: bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("{path}: truncated, needed {expected} bytes but found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("image/label count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("expected {expected} prediction lines, found {found}")]
    LineCount { expected: usize, found: usize },

    #[error("label {value} out of range for {classes} classes")]
    LabelRange { value: i64, classes: usize },

    #[error("index {0} out of range")]
    IndexOutOfRange(usize),

    #[error("index {0} is already labeled")]
    AlreadyLabeled(usize),

    #[error("labeling budget exhausted after {0} queries")]
    BudgetExhausted(usize),

    #[error("need at least {need} {what}, got {got}")]
    TooFew {
        what: &'static str,
        need: usize,
        got: usize,
    },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("confusion counts hold no observations")]
    EmptyCounts,

    #[error("cannot remove from empty confusion cell (pred {pred}, label {label})")]
    SwapUnderflow { pred: usize, label: usize },

    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("feature dimension mismatch: data has {data}, network expects {expected}")]
    DimensionMismatch { data: usize, expected: usize },

    #[error("augmented index {0} collides with the labeled set")]
    IndexCollision(usize),

    #[error("score map is empty")]
    EmptyScores,

    #[error("experiment log is empty")]
    EmptyLog,

    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    /// Process exit code for the CLI: 1 config, 2 i/o or file format, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Io(_)
            | Error::BadMagic { .. }
            | Error::Truncated { .. }
            | Error::CountMismatch { .. }
            | Error::Parse { .. }
            | Error::LineCount { .. }
            | Error::LabelRange { .. } => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
