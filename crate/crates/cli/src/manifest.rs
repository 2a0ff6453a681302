use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Started,
    Completed,
    Failed,
}

/// Record of one command invocation, written before any result file and
/// finalised afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub status: Status,
    /// Fully resolved configuration.
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    /// Files written, relative to the output directory.
    pub artifacts: Vec<String>,
    /// Command-specific summary.
    #[serde(default)]
    pub results: serde_json::Value,
    pub wall_clock_secs: Option<f64>,
    pub error: Option<String>,
}

impl RunManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        serde_json::from_str(&text).map_err(|e| io_err(&path, e))
    }
}

/// Live manifest for a run in progress.
pub struct Run {
    dir: PathBuf,
    manifest: RunManifest,
    started: Instant,
}

impl Run {
    pub fn start(dir: &Path, command: &str, config: serde_json::Value, seeds: BTreeMap<String, u64>) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let run = Self {
            dir: dir.to_path_buf(),
            manifest: RunManifest {
                command: command.into(),
                version: env!("CARGO_PKG_VERSION").into(),
                status: Status::Started,
                config,
                seeds,
                artifacts: Vec::new(),
                results: serde_json::Value::Null,
                wall_clock_secs: None,
                error: None,
            },
            started: Instant::now(),
        };
        run.save()?;
        Ok(run)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Absolute path of an artifact, recorded in the manifest.
    pub fn artifact(&mut self, rel: impl Into<String>) -> PathBuf {
        let rel = rel.into();
        let path = self.dir.join(&rel);
        self.manifest.artifacts.push(rel);
        path
    }

    pub fn set_results(&mut self, results: serde_json::Value) {
        self.manifest.results = results;
    }

    pub fn finish(mut self, outcome: Result<()>) -> Result<()> {
        self.manifest.wall_clock_secs = Some(self.started.elapsed().as_secs_f64());
        match &outcome {
            Ok(()) => self.manifest.status = Status::Completed,
            Err(e) => {
                self.manifest.status = Status::Failed;
                self.manifest.error = Some(e.to_string());
            }
        }
        let saved = self.save();
        outcome.and(saved)
    }

    fn save(&self) -> Result<()> {
        let path = self.dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self.manifest).map_err(|e| CliError::Io(e.to_string()))?;
        std::fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}
