//! Report assembly: self-describing JSON envelopes and all-at-once file
//! writing so failed commands leave no partial reports behind.

use std::fs;
use std::path::{Path, PathBuf};

use ima_core::error::{Error, Result};

use crate::config::RunConfig;

/// Wrap a report body with the tool version and the resolved config.
pub fn envelope(command: &str, config: &RunConfig, body: serde_json::Value) -> serde_json::Value {
    serde_json::json!({
        "tool": "ima-probe",
        "version": crate::TOOL_VERSION,
        "command": command,
        "config": serde_json::to_value(config).expect("config serializes"),
        "report": body,
    })
}

/// One output file, rendered in memory before anything touches disk.
pub struct OutFile {
    pub relative_path: PathBuf,
    pub bytes: Vec<u8>,
}

impl OutFile {
    pub fn text(relative_path: impl Into<PathBuf>, text: String) -> Self {
        OutFile {
            relative_path: relative_path.into(),
            bytes: text.into_bytes(),
        }
    }

    pub fn json(relative_path: impl Into<PathBuf>, value: &serde_json::Value) -> Self {
        let mut text = serde_json::to_string_pretty(value).expect("report serializes");
        text.push('\n');
        OutFile::text(relative_path, text)
    }

    pub fn binary(relative_path: impl Into<PathBuf>, bytes: Vec<u8>) -> Self {
        OutFile {
            relative_path: relative_path.into(),
            bytes,
        }
    }
}

/// Write every file under `out_dir`, creating directories as needed.
/// Callers compute all content first; validation failures happen before
/// this point, so reports are never half-written.
pub fn write_all(out_dir: &Path, files: Vec<OutFile>) -> Result<Vec<PathBuf>> {
    let mut written = Vec::with_capacity(files.len());
    for file in files {
        let path = out_dir.join(&file.relative_path);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, &file.bytes).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
