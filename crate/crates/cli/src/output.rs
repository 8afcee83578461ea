//! Atomic file output: CSV with 17 significant digits and JSON sidecars.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

/// Shortest text form that still round-trips any `f64` exactly.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        // keep the sign of negative zero out of the files
        return "0".to_string();
    }
    format!("{x:.16e}")
}

/// Write `bytes` to `path` through a temporary file in the same directory
/// and an atomic rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating a temporary file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Column-oriented numeric table.
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_bytes(&self) -> anyhow::Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|x| fmt_f64(*x)))?;
        }
        Ok(w.into_inner()?)
    }

    pub fn read(path: &Path) -> anyhow::Result<Self> {
        let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
        let header = r.headers()?.iter().map(String::from).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            rows.push(rec.iter().map(|s| s.parse::<f64>()).collect::<Result<Vec<_>, _>>().with_context(|| format!("parsing {}", path.display()))?);
        }
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

/// Metadata written next to every data file.
#[derive(Debug, Serialize)]
pub struct Sidecar<'a, T: Serialize> {
    pub file: String,
    pub command: &'a str,
    pub version: &'static str,
    pub sha256: String,
    pub config: &'a RunConfig,
    pub details: T,
}

/// Output directory of one command.
pub struct Workspace {
    pub dir: PathBuf,
    pub command: String,
    /// The run configuration with `out` blanked, so that sidecars do not
    /// depend on where a run was written.
    pub config: RunConfig,
}

impl Workspace {
    pub fn new(dir: impl Into<PathBuf>, command: &str, config: &RunConfig) -> Self {
        let mut config = config.clone();
        config.out = PathBuf::from(".");
        Self { dir: dir.into(), command: command.to_string(), config }
    }

    pub fn sub(&self, name: &str) -> Self {
        Self { dir: self.dir.join(name), command: self.command.clone(), config: self.config.clone() }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Write a table as `name` plus `name.json` describing it.
    pub fn table<T: Serialize>(&self, name: &str, table: &Table, details: T) -> anyhow::Result<()> {
        let bytes = table.to_bytes()?;
        write_atomic(&self.path(name), &bytes)?;
        let meta = Sidecar {
            file: name.to_string(),
            command: &self.command,
            version: env!("CARGO_PKG_VERSION"),
            sha256: hex_digest(&bytes),
            config: &self.config,
            details,
        };
        write_json(&self.path(&format!("{name}.json")), &meta)
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> anyhow::Result<()> {
        write_json(&self.path(name), value)
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Digest over every file below `dir` except those named in `skip`, in
/// path order.
pub fn tree_digest(dir: &Path, skip: &[&str]) -> anyhow::Result<String> {
    let mut files = Vec::new();
    collect(dir, &mut files)?;
    files.retain(|f| f.file_name().and_then(|n| n.to_str()).is_none_or(|n| !skip.contains(&n)));
    files.sort();
    let mut h = Sha256::new();
    for f in files {
        h.update(f.strip_prefix(dir)?.to_string_lossy().as_bytes());
        h.update(std::fs::read(&f)?);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn collect(dir: &Path, out: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            collect(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [std::f64::consts::PI, -1e-300, 1.0 / 3.0, 6.02214076e23, f64::MIN_POSITIVE] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
            assert_eq!(s.split('e').next().unwrap().chars().filter(|c| c.is_ascii_digit()).count(), 17);
        }
        assert_eq!(fmt_f64(-0.0), "0");
    }

    #[test]
    fn table_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Table::new(["a", "b"]);
        t.push(vec![1.0, 0.1]);
        t.push(vec![-2.5e-17, 3.0]);
        let p = dir.path().join("sub/t.csv");
        write_atomic(&p, &t.to_bytes().unwrap()).unwrap();
        let back = Table::read(&p).unwrap();
        assert_eq!(back.header, t.header);
        assert_eq!(back.rows, t.rows);
        assert_eq!(back.column("b").unwrap(), vec![0.1, 3.0]);
        // no temporary files left behind
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
