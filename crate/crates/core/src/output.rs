//! Result files: CSV payloads, a versioned JSON summary and the config echo.
//!
//! CSV floats use 17 significant digits in scientific notation so every
//! `f64` round-trips exactly; lines end in LF. All files are written to a
//! temporary sibling and renamed into place.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: &str = "1.0";
const SUPPORTED_MAJOR: u64 = 1;

pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_ECHO_FILE: &str = "config.toml";

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// In-memory CSV table.
#[derive(Debug, Clone, Default)]
pub struct Csv {
    text: String,
}

impl Csv {
    pub fn with_header(columns: &[&str]) -> Self {
        let mut csv = Csv::default();
        csv.push_fields(columns.iter().map(|c| c.to_string()));
        csv
    }

    /// No header row; for plain matrices.
    pub fn headerless() -> Self {
        Csv::default()
    }

    pub fn push_fields<I: IntoIterator<Item = String>>(&mut self, fields: I) {
        let mut first = true;
        for f in fields {
            if !first {
                self.text.push(',');
            }
            first = false;
            self.text.push_str(&f);
        }
        self.text.push('\n');
    }

    pub fn push_floats(&mut self, row: &[f64]) {
        self.push_fields(row.iter().map(|&x| fmt_f64(x)));
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

/// Write `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Files produced by one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultBundle {
    pub dir: PathBuf,
    pub files: Vec<PathBuf>,
}

impl ResultBundle {
    pub fn new(dir: PathBuf) -> Self {
        ResultBundle { dir, files: Vec::new() }
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        write_atomic(&path, contents.as_bytes())?;
        self.files.push(path);
        Ok(())
    }

    pub fn write_csv(&mut self, name: &str, csv: &Csv) -> Result<()> {
        self.write(name, csv.as_str())
    }

    /// `fields` must be a JSON object; `schema_version` and `command` are prepended.
    pub fn write_summary(&mut self, command: &str, fields: Value) -> Result<()> {
        let mut obj = Map::new();
        obj.insert("schema_version".into(), json!(SCHEMA_VERSION));
        obj.insert("command".into(), json!(command));
        match fields {
            Value::Object(m) => obj.extend(m),
            other => {
                obj.insert("result".into(), other);
            }
        }
        let mut text = serde_json::to_string_pretty(&Value::Object(obj))?;
        text.push('\n');
        self.write(SUMMARY_FILE, &text)
    }
}

/// Read a summary, rejecting unknown major schema versions.
pub fn read_summary(path: &Path) -> Result<Value> {
    let value: Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    check_schema(&value)?;
    Ok(value)
}

pub fn check_schema(value: &Value) -> Result<()> {
    let version = value
        .get("schema_version")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::SchemaVersion("missing".into()))?;
    let major = version.split('.').next().and_then(|m| m.parse::<u64>().ok());
    if major != Some(SUPPORTED_MAJOR) {
        return Err(Error::SchemaVersion(version.into()));
    }
    Ok(())
}
