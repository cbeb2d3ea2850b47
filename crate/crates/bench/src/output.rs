//! Artifact assembly and atomic writes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::BenchError;

/// Build identification captured at compile time.
pub const GIT_DESCRIBE: &str = env!("EMBEDSTEER_GIT_DESCRIBE");

/// Named files produced by an experiment, held in memory until every run
/// has succeeded.
#[derive(Debug, Default, Clone)]
pub struct Artifacts {
    pub files: Vec<(String, Vec<u8>)>,
}

impl Artifacts {
    pub fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.push((name.into(), bytes));
    }

    pub fn add_csv<T: Serialize>(&mut self, name: impl Into<String>, rows: &[T]) -> Result<(), BenchError> {
        let bytes = csv_bytes(rows)?;
        self.add(name, bytes);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, b)| b.as_slice())
    }

    pub fn names(&self) -> Vec<&str> {
        self.files.iter().map(|(n, _)| n.as_str()).collect()
    }

    /// Writes every file through a temporary sibling and a rename.
    pub fn write_all(&self, dir: &Path) -> Result<Vec<PathBuf>, BenchError> {
        fs::create_dir_all(dir)?;
        self.files.iter().map(|(name, bytes)| write_atomic(dir, name, bytes)).collect()
    }
}

pub fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>, BenchError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| BenchError::Io(std::io::Error::other(e.to_string())))
}

pub fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, BenchError> {
    let target = dir.join(name);
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    fs::write(&tmp, bytes)?;
    if let Err(e) = fs::rename(&tmp, &target) {
        let _ = fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(target)
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a, C: Serialize, S: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub git_describe: &'static str,
    pub kind: &'a str,
    pub started_unix_s: u64,
    pub wall_time_s: f64,
    pub config: &'a C,
    pub files: Vec<String>,
    pub summary: S,
}
