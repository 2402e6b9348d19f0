use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left} vs {right}")]
    Dimension {
        op: &'static str,
        left: String,
        right: String,
    },

    /// A caller broke an operation's precondition (stale tape, bad argument).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("bag is empty")]
    EmptyBag,

    #[error("AUC is undefined: labels contain a single class")]
    UndefinedAuc,

    #[error("stratification failed: {0}")]
    Stratification(String),

    #[error("training diverged at epoch {epoch}, bag {bag_id}: loss = {loss}")]
    Diverged {
        epoch: usize,
        bag_id: String,
        loss: f64,
    },

    #[error("missing file {}", path.display())]
    MissingFile { path: PathBuf },

    #[error("bad magic in {}: expected {expected:?}", path.display())]
    BadMagic {
        path: PathBuf,
        expected: &'static str,
    },

    #[error("unsupported format version {version} in {}", path.display())]
    BadVersion { path: PathBuf, version: u16 },

    #[error("size mismatch in {}: header implies {expected} bytes, found {actual}", path.display())]
    SizeMismatch {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("label {value:?} in {} is not a class index", path.display())]
    BadLabel { path: PathBuf, value: String },

    #[error("malformed {what} in {}: {detail}", path.display())]
    Malformed {
        path: PathBuf,
        what: &'static str,
        detail: String,
    },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn dim(op: &'static str, left: impl ToString, right: impl ToString) -> Self {
        Error::Dimension {
            op,
            left: left.to_string(),
            right: right.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the filesystem or file contents.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::MissingFile { .. }
                | Error::BadMagic { .. }
                | Error::BadVersion { .. }
                | Error::SizeMismatch { .. }
                | Error::BadLabel { .. }
                | Error::Malformed { .. }
                | Error::Io { .. }
        )
    }
}
