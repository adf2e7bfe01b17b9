//! CSV tables, diagnostics reports and atomic file writes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

/// A table of rows written with 17 significant digits.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn new(header: Vec<String>) -> Self {
        Self { header, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            for (k, x) in row.iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{x:.16e}");
            }
            out.push('\n');
        }
        out
    }
}

/// Column names `prefix_0 .. prefix_{n-1}`.
pub fn numbered(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|k| format!("{prefix}_{k}")).collect()
}

/// Refinement-order table of a convergence study.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StudyTable {
    pub levels: Vec<StudyLevel>,
    /// `log2(r_i / r_{i+1})` per metric, or `"saturated"` at roundoff.
    pub orders: BTreeMap<String, Vec<Order>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StudyLevel {
    pub level: u32,
    pub n_s: usize,
    pub dt: f64,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Order {
    Measured(f64),
    Saturated(&'static str),
}

impl Order {
    pub fn value(&self) -> Option<f64> {
        match self {
            Order::Measured(x) => Some(*x),
            Order::Saturated(_) => None,
        }
    }
}

/// What a scenario run reports.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    pub scalars: BTreeMap<String, f64>,
    pub series: BTreeMap<String, Vec<f64>>,
}

impl Diagnostics {
    pub fn scalar(&mut self, name: &str, value: f64) {
        self.scalars.insert(name.to_string(), value);
    }

    pub fn series(&mut self, name: &str, values: Vec<f64>) {
        self.series.insert(name.to_string(), values);
    }
}

/// Serializes `value` as pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidArgument(format!("diagnostics are not serializable: {e}")))?;
    s.push('\n');
    Ok(s)
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("`{}` is not a file path", path.display())))?;
    let tmp: PathBuf = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path.display().to_string(), e)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trips_exactly() {
        let mut t = CsvTable::new(vec!["t".into(), "x".into()]);
        let x = 0.1 + 0.2;
        t.push(vec![1.0 / 3.0, x]);
        let text = t.render();
        let row = text.lines().nth(1).unwrap();
        let back: Vec<f64> = row.split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(back, vec![1.0 / 3.0, x]);
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("a.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
