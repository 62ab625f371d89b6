//! Reproducibility record written next to every output.

use std::path::{Path, PathBuf};

use serde::Serialize;
use viewrel_core::util::write_atomic;

#[derive(Debug, Serialize)]
pub struct Input {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunRecord<C: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub args: Vec<String>,
    pub config: C,
    pub inputs: Vec<Input>,
}

impl<C: Serialize> RunRecord<C> {
    pub fn new(command: &'static str, config: C, inputs: Vec<Input>) -> Self {
        Self {
            tool: "viewrel",
            version: env!("CARGO_PKG_VERSION"),
            command,
            args: std::env::args().collect(),
            config,
            inputs,
        }
    }

    pub fn write_for(&self, output: &Path) -> anyhow::Result<PathBuf> {
        let path = record_path(output);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }
}

/// `out` with `.run.json` appended to its file name.
pub fn record_path(output: &Path) -> PathBuf {
    let mut name = output
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_else(|| "output".into());
    name.push(".run.json");
    output.with_file_name(name)
}
