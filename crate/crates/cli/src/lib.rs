//! Config-driven experiment runner for the `grushin` binary.

use std::path::PathBuf;

pub mod config;
pub mod run;

pub use config::{validate, Command, Diagnostic, ExperimentConfig, Severity};
pub use run::{run, RunManifest, RunOptions};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("invalid config:\n{}", .0.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Diagnostic>),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: grushin_core::Error,
    },

    #[error("`{0}` already exists; pass --overwrite to replace it")]
    Collision(PathBuf),

    #[error("stage `{stage}` needs `{path}`; {hint}")]
    MissingInput {
        stage: &'static str,
        path: PathBuf,
        hint: &'static str,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
