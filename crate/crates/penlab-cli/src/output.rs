//! Result files: atomic writes and shared serialization conventions.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, Result};

/// Every JSON document the driver emits carries this so downstream readers
/// can detect layout changes.
pub const SCHEMA_VERSION: u32 = 1;

/// Write `contents` to `path` through a temp file in the same directory, so
/// readers never observe a half-written result.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = parent {
        fs::create_dir_all(dir)?;
    }
    let file_name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| CliError::runtime(format!("bad output path '{}'", path.display())))?;
    let tmp = match parent {
        Some(dir) => dir.join(format!(".{file_name}.tmp")),
        None => PathBuf::from(format!(".{file_name}.tmp")),
    };
    fs::write(&tmp, contents).map_err(|e| {
        CliError::runtime(format!("cannot write '{}': {e}", tmp.display()))
    })?;
    fs::rename(&tmp, path).map_err(|e| {
        CliError::runtime(format!("cannot move result into '{}': {e}", path.display()))
    })?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::runtime(format!("cannot serialize result: {e}")))?;
    text.push('\n');
    write_atomic(path, &text)
}

/// Floats in CSV output keep 17 significant digits so runs are comparable
/// bit for bit.
pub fn csv_float(v: f64) -> String {
    format!("{v:.16e}")
}
