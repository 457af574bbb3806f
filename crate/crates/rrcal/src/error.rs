use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("output directory {} does not exist", .0.display())]
    MissingDirectory(PathBuf),

    /// A malformed record, reported with its 1-based line number.
    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },

    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },

    #[error(transparent)]
    Core(#[from] rrcal_core::Error),

    #[error("{0}")]
    Usage(String),
}

impl Error {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } | Error::MissingDirectory(_) => "io",
            Error::Parse { .. } | Error::Json { .. } | Error::Csv { .. } => "parse",
            Error::Core(rrcal_core::Error::Divergence { .. }) => "divergence",
            Error::Core(_) => "invalid",
            Error::Usage(_) => "usage",
        }
    }

    /// `error: <kind>: <message>` on a single line.
    pub fn one_line(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("error: {}: {msg}", self.kind())
    }
}
