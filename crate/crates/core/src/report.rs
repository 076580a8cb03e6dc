//! Shared output helpers: explicit "undefined" markers for CSV and JSON reports.

use std::io::Write;
use std::path::Path;

use serde::Serializer;

use crate::error::{Error, Result};

pub const UNDEFINED: &str = "undefined";

/// Formats a value for CSV output, writing `undefined` instead of a number when absent.
pub fn cell(v: Option<f64>) -> String {
    match v {
        Some(x) => x.to_string(),
        None => UNDEFINED.to_string(),
    }
}

pub(crate) fn serialize_opt<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(x) => s.serialize_f64(*x),
        None => s.serialize_str(UNDEFINED),
    }
}

/// Opens a CSV file, creating parent directories. When a seed is given it is
/// echoed on a leading `# seed=N` comment line.
pub fn csv_writer(path: &Path, seed: Option<u64>) -> Result<csv::Writer<std::fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    if let Some(seed) = seed {
        writeln!(file, "# seed={seed}").map_err(|e| Error::io(path, e))?;
    }
    Ok(csv::Writer::from_writer(file))
}

/// Reader that skips the `# seed=N` comment line.
pub fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
