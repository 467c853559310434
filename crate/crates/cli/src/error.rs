use std::path::{Path, PathBuf};

use grammarscope_core::cluster::ClusterError;
use grammarscope_core::corrupt::CorruptError;
use grammarscope_core::data::DataError;
use grammarscope_core::syntax::SyntaxError;
use grammarscope_core::validate::ValidateError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("missing {artifact}; run `grammarscope {producer}` first")]
    Missing { artifact: PathBuf, producer: String },
    #[error("{0} exists and is not empty; pass --force to replace it")]
    Exists(PathBuf),
    #[error("artifact mismatch: {0}")]
    Mismatch(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Corrupt(#[from] CorruptError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error(transparent)]
    Validate(#[from] ValidateError),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Missing { .. } => "missing-artifact",
            CliError::Exists(_) => "exists",
            CliError::Mismatch(_) => "mismatch",
            CliError::Io { .. } => "io",
            CliError::Data(_) => "data",
            CliError::Corrupt(_) => "corrupt",
            CliError::Cluster(_) => "cluster",
            CliError::Syntax(_) => "syntax",
            CliError::Validate(_) => "validate",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Missing { .. } => 3,
            _ => 1,
        }
    }

    /// One JSON object for stderr.
    pub fn to_json_line(&self, command: &str) -> String {
        let mut v = serde_json::json!({ "error": self.to_string(), "kind": self.kind(), "command": command });
        if let CliError::Missing { artifact, producer } = self {
            v["artifact"] = artifact.display().to_string().into();
            v["producer"] = producer.clone().into();
        }
        v.to_string()
    }
}
