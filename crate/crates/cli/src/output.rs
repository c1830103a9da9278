//! Output directory bookkeeping: every file goes through [`OutputDir`] so the
//! manifest can list it with its size and SHA-256 digest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const MANIFEST_SCHEMA: &str = "datorus-manifest/1";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.json";

pub type Metrics = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub version: String,
    pub scenario: String,
    pub seed: u64,
    pub workers: usize,
    pub config: Value,
    pub timings: Vec<StageTiming>,
    pub outputs: Vec<OutputEntry>,
    pub metrics: Metrics,
}

impl RunManifest {
    pub fn read(path: &Path) -> Result<RunManifest, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let raw: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::SchemaMismatch(format!("{}: {e}", path.display())))?;
        match raw.get("schema").and_then(Value::as_str) {
            Some(MANIFEST_SCHEMA) => {}
            other => {
                return Err(CliError::SchemaMismatch(format!(
                    "{}: schema {other:?}, expected {MANIFEST_SCHEMA:?}",
                    path.display()
                )))
            }
        }
        serde_json::from_value(raw).map_err(|e| CliError::SchemaMismatch(format!("{}: {e}", path.display())))
    }
}

/// Shortest round-trip decimal; exponent form outside `[1e-4, 1e15)`.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-4..1e15).contains(&a) || !v.is_finite() {
        v.to_string()
    } else {
        format!("{v:e}")
    }
}

pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn row(&mut self, cells: Vec<String>) {
        assert_eq!(cells.len(), self.header.len(), "row width");
        self.rows.push(cells);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    fn to_bytes(&self) -> Result<Vec<u8>, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).map_err(|e| CliError::Io(e.to_string()))?;
        for r in &self.rows {
            w.write_record(r).map_err(|e| CliError::Io(e.to_string()))?;
        }
        w.into_inner().map_err(|e| CliError::Io(e.to_string()))
    }
}

/// Cell helpers for table rows.
#[macro_export]
macro_rules! cells {
    ($($v:expr),* $(,)?) => {
        vec![$($crate::output::Cell::cell(&$v)),*]
    };
}

pub trait Cell {
    fn cell(&self) -> String;
}

impl Cell for f64 {
    fn cell(&self) -> String {
        fmt_f64(*self)
    }
}

macro_rules! display_cell {
    ($($t:ty),*) => {$(
        impl Cell for $t {
            fn cell(&self) -> String {
                self.to_string()
            }
        }
    )*};
}
display_cell!(u32, u64, usize, i64, bool, &str, String);

impl<T: Cell> Cell for Option<T> {
    fn cell(&self) -> String {
        self.as_ref().map_or(String::new(), Cell::cell)
    }
}

/// Lazily created output directory with an inventory of written files.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    created: bool,
    entries: Vec<OutputEntry>,
}

impl OutputDir {
    pub fn new(root: PathBuf) -> Self {
        OutputDir {
            root,
            created: false,
            entries: Vec::new(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entries(&self) -> &[OutputEntry] {
        &self.entries
    }

    fn put(&mut self, name: &str, bytes: &[u8], listed: bool) -> Result<(), CliError> {
        if !self.created {
            fs::create_dir_all(&self.root).map_err(|e| CliError::Io(format!("{}: {e}", self.root.display())))?;
            self.created = true;
        }
        let path = self.root.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        if listed {
            self.entries.push(OutputEntry {
                path: name.to_string(),
                bytes: bytes.len() as u64,
                sha256: hex::encode(Sha256::digest(bytes)),
            });
        }
        Ok(())
    }

    pub fn bytes(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        self.put(name, bytes, true)
    }

    pub fn csv(&mut self, name: &str, table: &Table) -> Result<(), CliError> {
        let bytes = table.to_bytes()?;
        self.put(name, &bytes, true)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let bytes = json_bytes(value)?;
        self.put(name, &bytes, true)
    }

    /// Writes the manifest itself, which is not part of its own inventory.
    pub fn manifest(&mut self, manifest: &RunManifest) -> Result<(), CliError> {
        let bytes = json_bytes(manifest)?;
        self.put(MANIFEST_FILE, &bytes, false)
    }
}

fn json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.0, -1.1777252095, 1e-13, 3.5e20, 0.1 + 0.2, 12345.678] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_f64(1e-13), "1e-13");
        assert_eq!(fmt_f64(0.25), "0.25");
    }

    #[test]
    fn inventory_digests_match_file_contents() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::new(dir.path().join("run"));
        let mut t = Table::new(&["a", "b"]);
        t.row(cells![1usize, 0.5]);
        out.csv("t.csv", &t).unwrap();
        let e = &out.entries()[0];
        let bytes = fs::read(dir.path().join("run/t.csv")).unwrap();
        assert_eq!(bytes, b"a,b\n1,0.5\n");
        assert_eq!(e.bytes, bytes.len() as u64);
        assert_eq!(e.sha256, hex::encode(Sha256::digest(&bytes)));
    }

    #[test]
    fn nothing_is_created_before_the_first_write() {
        let dir = tempfile::tempdir().unwrap();
        let out = OutputDir::new(dir.path().join("never"));
        assert!(out.entries().is_empty());
        assert!(!dir.path().join("never").exists());
    }
}
