use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct InputFile {
    pub path: PathBuf,
    pub sha256: Option<String>,
}

/// Reproducibility record written once per command invocation.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub version: String,
    pub inputs: Vec<InputFile>,
    pub outputs: Vec<PathBuf>,
    pub wall_seconds: f64,
    /// Command-specific results such as measured homophily.
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    pub details: serde_json::Value,
}

pub fn file_sha256(path: &Path) -> Option<String> {
    std::fs::read(path).ok().map(|b| hex::encode(Sha256::digest(b)))
}

/// Collects manifest fields while a command runs.
pub struct ManifestBuilder {
    start: Instant,
    pub manifest: RunManifest,
}

impl ManifestBuilder {
    pub fn new(command: &str) -> Self {
        Self {
            start: Instant::now(),
            manifest: RunManifest {
                command: command.to_string(),
                status: "running".into(),
                error: None,
                config: serde_json::Value::Null,
                seed: None,
                version: format!("dssl {}", env!("CARGO_PKG_VERSION")),
                inputs: Vec::new(),
                outputs: Vec::new(),
                wall_seconds: 0.0,
                details: serde_json::Value::Null,
            },
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.manifest.inputs.push(InputFile {
            path: path.to_path_buf(),
            sha256: file_sha256(path),
        });
    }

    pub fn output(&mut self, path: &Path) {
        self.manifest.outputs.push(path.to_path_buf());
    }

    pub fn config<T: Serialize>(&mut self, config: &T) {
        self.manifest.config = serde_json::to_value(config).unwrap_or(serde_json::Value::Null);
    }

    pub fn finish(mut self, result: Result<(), String>) -> RunManifest {
        self.manifest.wall_seconds = self.start.elapsed().as_secs_f64();
        match result {
            Ok(()) => self.manifest.status = "ok".into(),
            Err(e) => {
                self.manifest.status = "failed".into();
                self.manifest.error = Some(e);
            }
        }
        self.manifest
    }
}
