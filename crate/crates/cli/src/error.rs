use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },
    #[error(transparent)]
    Compute(#[from] mvsim_core::Error),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

impl CliError {
    pub fn io(path: &std::path::Path, err: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            message: err.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Compute(_) => 3,
            CliError::Io { .. } => 4,
        }
    }

    /// Machine-readable form written to stderr.
    pub fn to_json(&self) -> serde_json::Value {
        match self {
            CliError::Config { path, message } => json!({"error": "config", "path": path, "message": message}),
            CliError::Compute(e) => json!({"error": "compute", "message": e.to_string()}),
            CliError::Io { path, message } => json!({"error": "io", "path": path, "message": message}),
        }
    }
}
