//! CSV tables, JSON results and the run manifest.

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

/// A header plus rows of already formatted cells.
#[derive(Debug, Clone, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: vec![] }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| anyhow::anyhow!("csv: {e}"))
    }
}

/// Shortest round-trip decimal, scientific when `0 < |x| < 1e-3`.
pub fn num(x: f64) -> String {
    if x != 0.0 && x.is_finite() && x.abs() < 1e-3 {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn vec_cell(xs: &[f64]) -> String {
    xs.iter().map(|&x| num(x)).collect::<Vec<_>>().join(" ")
}

pub fn idx_cell(xs: &[usize]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

/// What a subcommand produced.
pub struct RunOutput {
    pub table: Table,
    pub json: serde_json::Value,
    /// Extra files (name, bytes), e.g. a binary path dump.
    pub extra: Vec<(String, Vec<u8>)>,
    pub exit_code: i32,
    pub messages: Vec<String>,
}

impl RunOutput {
    pub fn new(table: Table, json: impl Serialize) -> Result<Self> {
        Ok(Self { table, json: serde_json::to_value(json)?, extra: vec![], exit_code: 0, messages: vec![] })
    }
}

#[derive(Debug, Serialize)]
pub struct FileRecord {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub subcommand: String,
    pub config: String,
    pub config_sha256: String,
    pub seed: u64,
    pub workers: usize,
    pub vgx_core_version: String,
    pub vgx_cli_version: String,
    pub started_unix: u64,
    pub wall_time_seconds: f64,
    pub exit_code: i32,
    pub outputs: Vec<FileRecord>,
    pub messages: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes `name` into `dir` and records its hash.
pub fn write_file(dir: &Path, name: &str, bytes: &[u8], records: &mut Vec<FileRecord>) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
    records.push(FileRecord { name: name.into(), sha256: sha256_hex(bytes) });
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_format() {
        assert_eq!(num(0.25), "0.25");
        assert_eq!(num(1.822e-6), "1.822e-6");
        assert_eq!(num(0.0), "0");
        assert_eq!(num(12.5), "12.5");
        assert_eq!(num(-0.0005), "-5e-4");
    }

    #[test]
    fn csv_has_header() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec![num(1.0), "x y".into()]);
        assert_eq!(String::from_utf8(t.to_csv().unwrap()).unwrap(), "a,b\n1,x y\n");
    }
}
