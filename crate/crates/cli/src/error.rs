use std::path::Path;

use serde_json::json;

/// Config problems exit 2 and carry the offending field; anything else exits 1.
#[derive(Debug)]
pub enum CliError {
    Config { field: String, reason: String },
    Runtime { kind: &'static str, message: String },
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Runtime { kind: "io", message: format!("{}: {e}", path.display()) }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        CliError::Runtime { kind: "runtime", message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Runtime { .. } => 1,
        }
    }

    /// One JSON object on one line.
    pub fn line(&self) -> String {
        match self {
            CliError::Config { field, reason } => json!({"error": "config", "field": field, "message": reason}),
            CliError::Runtime { kind, message } => json!({"error": kind, "message": message}),
        }
        .to_string()
    }
}

impl From<contrailseg::Error> for CliError {
    fn from(e: contrailseg::Error) -> Self {
        use contrailseg::Error as E;
        let kind = match &e {
            E::Config { field, reason } => return CliError::Config { field: field.clone(), reason: reason.clone() },
            E::Dimension { .. } => "dimension",
            E::Usage(_) => "usage",
            E::Annotation(_) => "annotation",
            E::Value(_) => "value",
            E::Format { .. } => "format",
            E::Integrity(_) => "integrity",
            E::Training { .. } => "training",
            E::Io { .. } => "io",
        };
        CliError::Runtime { kind, message: e.to_string() }
    }
}
