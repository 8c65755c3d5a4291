//! Report envelopes and deterministic file output.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct Report<'a, T> {
    pub command: &'a str,
    /// SHA-256 of the config file, or of the canonical option JSON when the
    /// command takes no config.
    pub config_hash: String,
    pub seed: u64,
    pub result: T,
}

pub fn options_hash<T: Serialize>(options: &T) -> String {
    let bytes = serde_json::to_vec(options).expect("options serialize");
    hex::encode(Sha256::digest(bytes))
}

/// Output directory, created on demand.
pub struct OutDir(PathBuf);

impl OutDir {
    pub fn create(path: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(path).with_context(|| format!("cannot create output directory {}", path.display()))?;
        Ok(Self(path.to_path_buf()))
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> anyhow::Result<PathBuf> {
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
        Ok(path)
    }

    /// Writes a CSV with `header` and one record per row.
    pub fn csv<I, R>(&self, name: &str, header: &[&str], rows: I) -> anyhow::Result<PathBuf>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator,
        R::Item: AsRef<[u8]>,
    {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("cannot write {}", path.display()))?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(path)
    }
}

/// Formats a float for CSV output with full round-trip precision.
pub fn num(x: f64) -> String {
    format!("{x}")
}
