//! CSV/JSON emitters and run manifests.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Column-major numeric table with a fixed column order.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }
}

/// 17 significant digits, exponent form, '.' as decimal separator.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn csv_string(table: &Table) -> Result<String> {
    let mut out = table.columns.join(",");
    out.push('\n');
    for (i, r) in table.rows.iter().enumerate() {
        for (j, v) in r.iter().enumerate() {
            if !v.is_finite() {
                bail!(
                    "non-finite value {v} in row {i}, column '{}'",
                    table.columns[j]
                );
            }
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", fmt_f64(*v));
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn emit_csv(table: &Table, path: &Path) -> Result<()> {
    let text = csv_string(table)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_csv(path: &Path) -> Result<Table> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    let header = lines.next().context("empty CSV")?;
    let mut t = Table::new(header.split(','));
    for (i, l) in lines.enumerate() {
        let row = l
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .with_context(|| format!("line {}: bad number '{s}'", i + 2))
            })
            .collect::<Result<Vec<_>>>()?;
        if row.len() != t.columns.len() {
            bail!(
                "line {}: expected {} fields, got {}",
                i + 2,
                t.columns.len(),
                row.len()
            );
        }
        t.rows.push(row);
    }
    Ok(t)
}

/// Pretty JSON with keys sorted at every level.
pub fn json_string<T: Serialize>(report: &T) -> Result<String> {
    // serde_json's default map is ordered by key
    let v = serde_json::to_value(report)?;
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

pub fn emit_json<T: Serialize>(report: &T, path: &Path) -> Result<()> {
    let text = json_string(report)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn sha256_hex(data: &[u8]) -> String {
    Sha256::digest(data)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegratorSettings {
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
    pub stride: usize,
    pub exec: String,
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub code_version: String,
    pub config_version: u32,
    /// SHA-256 of the canonical config text after overrides.
    pub config_hash: String,
    pub config_path: String,
    pub subcommand: String,
    pub overrides: Vec<String>,
    pub outputs: Vec<String>,
    pub wall_time_s: f64,
    pub integrator: IntegratorSettings,
    /// Canonical config text, enough to re-run.
    pub config: String,
}

impl RunManifest {
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let p = dir.join("manifest.json");
        emit_json(self, &p)?;
        Ok(p)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}
