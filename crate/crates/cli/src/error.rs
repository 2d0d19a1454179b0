use std::path::PathBuf;

use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config field `{field}` points to missing path {}", path.display())]
    ConfigPathMissing { field: String, path: PathBuf },
    #[error("config is not valid JSON for this schema: {0}")]
    ConfigParse(String),
    #[error("invalid config: {0}")]
    ConfigInvalid(String),
    #[error("stage `{stage}` needs config field `{field}`")]
    ConfigFieldMissing { stage: &'static str, field: &'static str },
    #[error("stage `{stage}` input missing: {}", path.display())]
    InputMissing { stage: &'static str, path: PathBuf },
    #[error("output directory is locked by another run: {}", .0.display())]
    Locked(PathBuf),
    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: &'static str, message: String },
    #[error(transparent)]
    Io(#[from] arbor_core::io::IoError),
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::ConfigPathMissing { .. } => "CONFIG_PATH_MISSING",
            Self::ConfigParse(_) => "CONFIG_PARSE",
            Self::ConfigInvalid(_) => "CONFIG_INVALID",
            Self::ConfigFieldMissing { .. } => "CONFIG_FIELD_MISSING",
            Self::InputMissing { .. } => "STAGE_INPUT_MISSING",
            Self::Locked(_) => "OUTPUT_LOCKED",
            Self::Stage { .. } => "STAGE_FAILED",
            Self::Io(_) => "IO_ERROR",
        }
    }

    /// 2 for configuration problems, 1 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::ConfigPathMissing { .. } | Self::ConfigParse(_) | Self::ConfigInvalid(_) | Self::ConfigFieldMissing { .. } => 2,
            _ => 1,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut detail = json!({ "code": self.code(), "message": self.to_string() });
        match self {
            Self::ConfigPathMissing { field, path } => {
                detail["field"] = json!(field);
                detail["path"] = json!(path);
            }
            Self::ConfigFieldMissing { stage, field } => {
                detail["stage"] = json!(stage);
                detail["field"] = json!(field);
            }
            Self::InputMissing { stage, path } => {
                detail["stage"] = json!(stage);
                detail["path"] = json!(path);
            }
            Self::Stage { stage, .. } => detail["stage"] = json!(stage),
            _ => {}
        }
        json!({ "error": detail })
    }

    pub(crate) fn stage(stage: &'static str, e: impl std::fmt::Display) -> Self {
        Self::Stage {
            stage,
            message: e.to_string(),
        }
    }
}
