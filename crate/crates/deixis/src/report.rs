//! Plain-text result emission: small CSV tables and pretty JSON summaries.
//! Floats are written in shortest round-trip form, so identical runs emit
//! byte-identical files.

use crate::error::{AppError, Result};
use std::path::Path;

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut text = String::new();
    text.push_str(&header.join(","));
    text.push('\n');
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        text.push_str(&row.join(","));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| AppError::io(path, e))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let json =
        serde_json::to_string_pretty(value).map_err(|e| AppError::parse(path, e.to_string()))?;
    std::fs::write(path, json + "\n").map_err(|e| AppError::io(path, e))
}

/// Shortest round-trip decimal form of a float.
pub fn fmt(v: f64) -> String {
    format!("{v}")
}
