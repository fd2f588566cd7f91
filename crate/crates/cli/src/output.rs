use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

/// A failed run: error kind, message, and process exit code.
#[derive(Debug)]
pub struct Failure {
    pub kind: String,
    pub message: String,
    pub code: u8,
}

impl Failure {
    pub fn validation(kind: &str, message: impl Into<String>) -> Self {
        Self {
            kind: kind.to_string(),
            message: message.into(),
            code: 1,
        }
    }

    pub fn numerical(kind: &str, message: impl Into<String>) -> Self {
        Self {
            kind: kind.to_string(),
            message: message.into(),
            code: 2,
        }
    }

    pub fn io(path: &Path, err: impl fmt::Display) -> Self {
        Self::validation("Io", format!("{}: {err}", path.display()))
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self.kind, "message": self.message }).to_string()
    }
}

impl From<dcpl::Error> for Failure {
    fn from(e: dcpl::Error) -> Self {
        Self {
            kind: e.kind().to_string(),
            message: e.to_string(),
            code: if e.is_numerical() { 2 } else { 1 },
        }
    }
}

pub type CliResult<T = ()> = Result<T, Failure>;

/// Writes `bytes` to a temporary file next to `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).map_err(|e| Failure::io(&dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Failure::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| Failure::io(path, e))?;
    tmp.persist(path).map_err(|e| Failure::io(path, e.error))?;
    Ok(())
}

pub fn to_json_line<T: Serialize>(value: &T) -> CliResult<String> {
    serde_json::to_string(value).map_err(|e| Failure::validation("Json", e.to_string()))
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> CliResult<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| Failure::validation("Json", e.to_string()))
}

/// Prints a JSON summary to stdout and, when given, also writes it to `out`.
pub fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> CliResult {
    let text = to_json_pretty(value)?;
    if let Some(path) = out {
        write_atomic(path, text.as_bytes())?;
    }
    print!("{text}");
    Ok(())
}
