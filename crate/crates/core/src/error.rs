use std::fmt;

/// Crate-wide result alias.
pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Usage,
    Data,
    Internal,
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Usage => "usage",
            Category::Data => "data",
            Category::Internal => "internal",
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },

    #[error("{what} not found: {key}")]
    NotFound { what: &'static str, key: String },

    #[error("shape mismatch in {op}: {left} vs {right}")]
    Shape {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("point is behind the camera or degenerate (depth {depth:e})")]
    BehindCamera { depth: f64 },

    #[error("degenerate roi: {0}")]
    DegenerateRoi(String),

    #[error("roi out of bounds: {0}")]
    OutOfBounds(String),

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("average precision undefined: no eligible ground truth")]
    UndefinedAp,

    #[error("incomplete AP table: missing {0}")]
    IncompleteTable(String),

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn malformed(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Malformed {
            what,
            detail: detail.into(),
        }
    }

    pub(crate) fn not_found(what: &'static str, key: impl fmt::Debug) -> Self {
        Error::NotFound {
            what,
            key: format!("{key:?}"),
        }
    }

    pub(crate) fn shape(op: &'static str, left: impl fmt::Debug, right: impl fmt::Debug) -> Self {
        Error::Shape {
            op,
            left: format!("{left:?}"),
            right: format!("{right:?}"),
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn category(&self) -> Category {
        match self {
            Error::Config(_) => Category::Usage,
            Error::Shape { .. } | Error::Numeric(_) | Error::Invariant(_) => Category::Internal,
            _ => Category::Data,
        }
    }
}
