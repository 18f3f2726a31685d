use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::CliResult;
use crate::formats::write_json;

/// Provenance of one command run, written next to every output as
/// `<output>.manifest.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub tool_version: &'static str,
    /// Seconds; the only field that changes between identical runs.
    pub wall_time: f64,
}

pub fn sidecar_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    output.with_file_name(name)
}

impl RunManifest {
    pub fn write_sidecars(&self) -> CliResult<()> {
        for out in &self.outputs {
            write_json(&sidecar_path(out), self)?;
        }
        Ok(())
    }
}
