use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use tabmoe::{fsutil, json};

use crate::error::{CliError, CliResult};

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = json::to_canonical_string(value)?;
    write_text(path, &text)
}

/// One canonical JSON document per line.
pub fn write_jsonl<T: Serialize>(path: &Path, values: &[T]) -> CliResult<()> {
    let mut text = String::new();
    for v in values {
        text.push_str(&json::to_canonical_string(v)?);
    }
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fsutil::write_atomic(path, text.as_bytes())?;
    log::info!("wrote {}", path.display());
    Ok(())
}

/// Reads an artifact written by an earlier command; absence is
/// [`CliError::Missing`] with `hint` appended.
pub fn read_json<T: DeserializeOwned>(path: &Path, hint: &str) -> CliResult<T> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(CliError::Missing(format!("{} not found; {hint}", path.display())));
        }
        Err(e) => return Err(CliError::Input(format!("cannot read {}: {e}", path.display()))),
    };
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path, hint: &str) -> CliResult<Vec<T>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(CliError::Missing(format!("{} not found; {hint}", path.display())));
        }
        Err(e) => return Err(CliError::Input(format!("cannot read {}: {e}", path.display()))),
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::Input(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}
