use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;

/// A failure reported as a single JSON record on stderr.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Failure {
    pub kind: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
    pub reason: String,
}

impl Failure {
    fn new(kind: &'static str, reason: impl Into<String>) -> Self {
        Self {
            kind,
            file: None,
            field: None,
            reason: reason.into(),
        }
    }

    pub fn io(path: &Path, err: impl fmt::Display) -> Self {
        Self::new("io", err.to_string()).with_file(path)
    }

    pub fn parse(path: &Path, reason: impl Into<String>) -> Self {
        Self::new("parse", reason).with_file(path)
    }

    pub fn config(reason: impl Into<String>) -> Self {
        Self::new("config", reason)
    }

    pub fn config_field(field: &str, reason: impl Into<String>) -> Self {
        Self::new("config", reason).with_field(field)
    }

    pub fn usage(reason: impl Into<String>) -> Self {
        Self::new("usage", reason)
    }

    pub fn with_file(mut self, path: &Path) -> Self {
        self.file = Some(path.to_path_buf());
        self
    }

    pub fn with_field(mut self, field: &str) -> Self {
        self.field = Some(field.to_string());
        self
    }

    /// JSON line printed before a nonzero exit.
    pub fn record(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}

impl From<crownfuse::Error> for Failure {
    fn from(e: crownfuse::Error) -> Self {
        use crownfuse::Error as E;
        let kind = match &e {
            E::DimensionMismatch { .. } => "dimension-mismatch",
            E::InvalidParameter { .. } => "invalid-parameter",
            E::InvalidModelId { .. } => "invalid-model-id",
            E::NoGroundTruth => "no-ground-truth",
            _ => "pipeline",
        };
        let mut f = Self::new(kind, e.to_string());
        if let E::InvalidParameter { field, .. } = &e {
            f.field = Some(field.to_string());
        }
        f
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind)?;
        if let Some(p) = &self.file {
            write!(f, " in {}", p.display())?;
        }
        if let Some(field) = &self.field {
            write!(f, " ({field})")?;
        }
        write!(f, ": {}", self.reason)
    }
}

impl std::error::Error for Failure {}

/// Attaches a file to core errors.
pub trait InFile<T> {
    fn in_file(self, path: &Path) -> Result<T, Failure>;
}

impl<T> InFile<T> for crownfuse::Result<T> {
    fn in_file(self, path: &Path) -> Result<T, Failure> {
        self.map_err(|e| Failure::from(e).with_file(path))
    }
}
