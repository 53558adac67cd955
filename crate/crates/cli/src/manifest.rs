use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::CliError;

/// Everything needed to rerun a command: inputs, resolved flags, versions.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Vec<PathBuf>,
    pub flags: serde_json::Value,
    pub outputs: Vec<PathBuf>,
    pub versions: serde_json::Value,
    pub wall_seconds: f64,
}

pub struct ManifestBuilder {
    command: &'static str,
    inputs: Vec<PathBuf>,
    flags: serde_json::Value,
    outputs: Vec<PathBuf>,
    start: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &'static str, flags: &impl Serialize, inputs: &[&Path]) -> Self {
        ManifestBuilder {
            command,
            inputs: inputs.iter().map(|p| p.to_path_buf()).collect(),
            flags: serde_json::to_value(flags).expect("flags serialize"),
            outputs: Vec::new(),
            start: Instant::now(),
        }
    }

    pub fn output(&mut self, p: &Path) {
        self.outputs.push(p.to_path_buf());
    }

    pub fn finish(self, path: &Path) -> Result<(), CliError> {
        let m = RunManifest {
            command: self.command.into(),
            inputs: self.inputs,
            flags: self.flags,
            outputs: self.outputs,
            versions: serde_json::json!({
                "sensorplace-core": sensorplace::VERSION,
                "sensorplace-cli": env!("CARGO_PKG_VERSION"),
            }),
            wall_seconds: self.start.elapsed().as_secs_f64(),
        };
        write_json(path, &m)
    }
}

/// `out.json` → `out.manifest.json`.
pub fn sidecar(out: &Path) -> PathBuf {
    let stem = out.file_stem().map_or_else(|| "out".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}.manifest.json"))
}

pub fn write_json(path: &Path, v: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(v).expect("value serializes");
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}
