//! File formats and the run directory writer.
//!
//! Grid fields go to CSV with a `# dim=<d> N=<n> field=<name>` header and one
//! value per line, axis 0 fastest, in 17 significant digits so that reading
//! back is bit-exact. Tables are plain comma-separated with a header row.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::grid::{GridField, PeriodicGrid};
use crate::mather::DiscreteMeasure;

/// `{:.16e}`: 17 significant digits, enough to round-trip any f64.
pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn grid_csv(field: &GridField, name: &str) -> String {
    let g = field.grid();
    let mut s = String::with_capacity(24 * field.len() + 64);
    let _ = writeln!(s, "# dim={} N={} field={}", g.dim(), g.n_per_axis(), name);
    for &v in field.values() {
        s.push_str(&format_value(v));
        s.push('\n');
    }
    s
}

fn parse_err(detail: impl Into<String>) -> Error {
    Error::Config {
        field: "grid csv".into(),
        detail: detail.into(),
    }
}

/// Inverse of [`grid_csv`]; returns the field and its name.
pub fn parse_grid_csv(text: &str) -> Result<(GridField, String)> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| parse_err("empty file"))?;
    let rest = header.strip_prefix("# ").ok_or_else(|| parse_err("missing '# ' header"))?;
    let (mut dim, mut n, mut name) = (None, None, None);
    for tok in rest.split_whitespace() {
        match tok.split_once('=') {
            Some(("dim", v)) => dim = v.parse::<usize>().ok(),
            Some(("N", v)) => n = v.parse::<usize>().ok(),
            Some(("field", v)) => name = Some(v.to_string()),
            _ => return Err(parse_err(format!("unexpected header token {tok:?}"))),
        }
    }
    let (dim, n, name) = match (dim, n, name) {
        (Some(d), Some(n), Some(f)) => (d, n, f),
        _ => return Err(parse_err("header needs dim, N and field")),
    };
    let grid = PeriodicGrid::new(dim, n)?;
    let values = lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| l.trim().parse::<f64>().map_err(|e| parse_err(format!("value line {}: {e}", i + 2))))
        .collect::<Result<Vec<f64>>>()?;
    if values.len() != grid.len() {
        return Err(parse_err(format!("expected {} values, found {}", grid.len(), values.len())));
    }
    Ok((GridField::from_values(grid, values)?, name))
}

pub fn read_grid_csv(path: &Path) -> Result<(GridField, String)> {
    parse_grid_csv(&fs::read_to_string(path)?)
}

/// Numeric table; `None` cells are written empty.
pub fn table_csv(header: &[&str], rows: &[Vec<Option<f64>>]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|c| c.map(format_value).unwrap_or_default()).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

/// One atom per line: position, momentum, velocity, weight.
pub fn measure_csv(measure: &DiscreteMeasure) -> String {
    let d = measure.dim;
    let mut header: Vec<String> = Vec::new();
    for prefix in ["x", "p", "v"] {
        for k in 0..d {
            header.push(format!("{prefix}{k}"));
        }
    }
    header.push("w".into());
    let mut s = header.join(",");
    s.push('\n');
    for a in &measure.atoms {
        let mut cells: Vec<String> = Vec::with_capacity(3 * d + 1);
        for arr in [&a.x, &a.p, &a.v] {
            cells.extend(arr[..d].iter().map(|&v| format_value(v)));
        }
        cells.push(format_value(a.w));
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateEntry {
    pub name: String,
    pub pass: bool,
    pub detail: Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub stage: String,
    pub message: String,
    pub exit_code: i32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: Value,
    pub started: String,
    pub finished: String,
    pub workers: usize,
    pub status: String,
    pub failure: Option<Failure>,
    pub certificates: Vec<CertificateEntry>,
    pub files: Vec<FileEntry>,
}

pub fn timestamp() -> String {
    humantime::format_rfc3339_millis(std::time::SystemTime::now()).to_string()
}

/// Owns a run directory. Every output file is written through it so that
/// the manifest inventory is complete.
#[derive(Debug)]
pub struct RunWriter {
    dir: PathBuf,
    files: Vec<FileEntry>,
    certificates: Vec<CertificateEntry>,
}

impl RunWriter {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            certificates: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Write `bytes` to `name` (relative, may contain subdirectories).
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        let entry = FileEntry {
            path: name.to_string(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(bytes),
        };
        match self.files.iter_mut().find(|f| f.path == name) {
            Some(f) => *f = entry,
            None => self.files.push(entry),
        }
        Ok(())
    }

    pub fn write_grid(&mut self, name: &str, field: &GridField, label: &str) -> Result<()> {
        self.write(name, grid_csv(field, label).as_bytes())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn certify(&mut self, name: &str, pass: bool, detail: Value) {
        self.certificates.push(CertificateEntry {
            name: name.to_string(),
            pass,
            detail,
        });
    }

    pub fn certificates(&self) -> &[CertificateEntry] {
        &self.certificates
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }

    /// Write `manifest.json` atomically through a temporary file and rename.
    pub fn finish(self, mut manifest: ExperimentManifest) -> Result<ExperimentManifest> {
        manifest.files = self.files;
        manifest.files.sort_by(|a, b| a.path.cmp(&b.path));
        manifest.certificates = self.certificates;
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let tmp = self.dir.join(".manifest.json.tmp");
        fs::write(&tmp, text)?;
        fs::rename(&tmp, self.dir.join("manifest.json"))?;
        Ok(manifest)
    }
}
