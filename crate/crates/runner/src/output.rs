use std::path::Path;

use serde::Serialize;

use crate::error::{Result, RunnerError};

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| RunnerError::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| RunnerError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    write_text(path, &text)
}

/// Writes a CSV from a header and pre-formatted records.
pub fn write_csv(path: &Path, header: &[&str], records: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| RunnerError::Invalid(format!("csv: {e}"));
    w.write_record(header).map_err(to_err)?;
    for r in records {
        w.write_record(r).map_err(to_err)?;
    }
    let bytes = w.into_inner().map_err(|e| RunnerError::Invalid(format!("csv: {e}")))?;
    std::fs::write(path, bytes).map_err(|e| RunnerError::io(path, e))
}

/// Number format shared by every numeric CSV.
pub fn num(x: f64) -> String {
    format!("{x:e}")
}
