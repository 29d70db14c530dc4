//! Run manifests: every command records its resolved configuration, inputs,
//! outputs, tool version and wall-clock next to its artifacts. Written
//! atomically (temp file + rename) so readers never observe a partial one.

use interdyad_core::Result;
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub version: String,
    pub wall_clock_ms: u64,
}

impl RunManifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        RunManifest {
            command: command.to_string(),
            config,
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_clock_ms: 0,
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn inputs<I, P>(mut self, paths: I) -> Self
    where
        I: IntoIterator<Item = P>,
        P: AsRef<Path>,
    {
        self.inputs = paths
            .into_iter()
            .map(|p| p.as_ref().display().to_string())
            .collect();
        self
    }

    pub fn outputs<I, P>(mut self, paths: I) -> Self
    where
        I: IntoIterator<Item = P>,
        P: AsRef<Path>,
    {
        self.outputs = paths
            .into_iter()
            .map(|p| p.as_ref().display().to_string())
            .collect();
        self
    }

    /// Stamp the elapsed wall-clock and write atomically.
    pub fn finish(mut self, start: Instant, path: PathBuf) -> Result<()> {
        self.wall_clock_ms = start.elapsed().as_millis() as u64;
        let tmp = path.with_extension("json.tmp");
        let bytes = serde_json::to_vec_pretty(&self)
            .map_err(|e| interdyad_core::Error::format(&path, e.to_string()))?;
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(&tmp, &path)?;
        Ok(())
    }
}
