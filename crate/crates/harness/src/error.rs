use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Model(#[from] waveseg::Error),
    /// Malformed configuration, located by line and field where known.
    #[error("{}", config_message(.path, .line, .field, .message))]
    Config {
        path: Option<PathBuf>,
        line: Option<usize>,
        field: Option<String>,
        message: String,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    /// Corpus contents that violate the sample contract.
    #[error("corpus error: {0}")]
    Corpus(String),
    /// Ablation arms that share state they should not.
    #[error("ablation audit failed: {0}")]
    Audit(String),
}

fn config_message(
    path: &Option<PathBuf>,
    line: &Option<usize>,
    field: &Option<String>,
    message: &str,
) -> String {
    let mut out = String::from("config error");
    if let Some(p) = path {
        out.push_str(&format!(" in {}", p.display()));
    }
    if let Some(l) = line {
        out.push_str(&format!(" at line {l}"));
    }
    if let Some(f) = field {
        out.push_str(&format!(" (field `{f}`)"));
    }
    out.push_str(": ");
    out.push_str(message);
    out
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Config {
            path: None,
            line: None,
            field: Some(field.into()),
            message: message.into(),
        }
    }
}
