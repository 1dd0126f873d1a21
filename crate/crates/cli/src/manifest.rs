//! Run manifest written beside every output file.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub wall_clock_seconds: f64,
    pub final_objective: Option<f64>,
    /// Resolved options after merging the config file and flags.
    pub config: toml::Table,
}

impl RunManifest {
    pub fn new<T: Serialize>(command: &str, options: &T, seed: Option<u64>) -> Self {
        let config = toml::Table::try_from(options).unwrap_or_default();
        RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            wall_clock_seconds: 0.0,
            final_objective: None,
            config,
        }
    }

    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.display().to_string());
    }

    pub fn output(&mut self, p: &Path) {
        self.outputs.push(p.display().to_string());
    }

    /// Writes `<primary>.manifest.toml`.
    pub fn write(mut self, primary: &Path, started: Instant) -> std::io::Result<PathBuf> {
        self.wall_clock_seconds = started.elapsed().as_secs_f64();
        let path = manifest_path(primary);
        let text = toml::to_string(&self).map_err(std::io::Error::other)?;
        std::fs::write(&path, text)?;
        Ok(path)
    }
}

pub fn manifest_path(primary: &Path) -> PathBuf {
    let mut name = primary.as_os_str().to_owned();
    name.push(".manifest.toml");
    PathBuf::from(name)
}
