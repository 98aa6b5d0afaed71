//! CSV and JSON emission with atomic writes.
//!
//! Floats use Rust's shortest round-trip formatting, so identical inputs
//! produce byte-identical files and every value reloads exactly.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};

/// A cell of a CSV row.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
    Bool(bool),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

/// In-memory CSV table with a fixed header.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    header: Vec<String>,
    body: String,
    rows: usize,
}

impl CsvTable {
    /// Header entries carry their unit in parentheses, e.g. `t (days)`.
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Self { header: header.iter().map(|h| h.as_ref().to_string()).collect(), body: String::new(), rows: 0 }
    }

    pub fn push(&mut self, row: Vec<Cell>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(Error::GridMismatch(format!("row has {} cells, header has {}", row.len(), self.header.len())));
        }
        for (i, cell) in row.iter().enumerate() {
            if i > 0 {
                self.body.push(',');
            }
            match cell {
                Cell::Num(v) => write!(self.body, "{v}").expect("writing to a String cannot fail"),
                Cell::Int(v) => write!(self.body, "{v}").expect("writing to a String cannot fail"),
                Cell::Bool(v) => self.body.push_str(if *v { "true" } else { "false" }),
                Cell::Text(s) => {
                    if s.contains([',', '"', '\n', '\r']) {
                        return Err(Error::Config(format!("text cell {s:?} contains a CSV delimiter")));
                    }
                    self.body.push_str(s);
                }
            }
        }
        self.body.push('\n');
        self.rows += 1;
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn render(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        out.push_str(&self.body);
        out
    }
}

/// Write `contents` to `path` through a temporary file in the same
/// directory followed by a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Collects files for one scenario run.
#[derive(Debug)]
pub struct OutputSink {
    dir: PathBuf,
    csv: bool,
    json: bool,
    written: Vec<PathBuf>,
}

impl OutputSink {
    pub fn new(dir: impl Into<PathBuf>, csv: bool, json: bool) -> Self {
        Self { dir: dir.into(), csv, json, written: Vec::new() }
    }

    pub fn csv(&mut self, name: &str, table: &CsvTable) -> Result<()> {
        if self.csv {
            let path = self.dir.join(name);
            write_atomic(&path, table.render().as_bytes())?;
            self.written.push(path);
        }
        Ok(())
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        if self.json {
            let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
            text.push('\n');
            let path = self.dir.join(name);
            write_atomic(&path, text.as_bytes())?;
            self.written.push(path);
        }
        Ok(())
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}
