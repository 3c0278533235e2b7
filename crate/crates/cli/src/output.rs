//! Report envelopes, CSV formatting and atomic file writes.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const GENERATOR: &str = "bregtik-cli";

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub generator: &'static str,
    pub version: &'static str,
    pub rng: &'static str,
    pub command: &'static str,
    pub seed: u64,
    pub config_sha256: String,
    pub config: String,
}

impl Provenance {
    pub fn new(command: &'static str, seed: u64, config_text: &str) -> Self {
        Self {
            generator: GENERATOR,
            version: env!("CARGO_PKG_VERSION"),
            rng: bregtik::rng::GENERATOR,
            command,
            seed,
            config_sha256: hex::encode(Sha256::digest(config_text.as_bytes())),
            config: config_text.to_string(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report<B> {
    pub provenance: Provenance,
    pub passed: bool,
    pub result: B,
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub struct OutDir {
    dir: PathBuf,
}

impl OutDir {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes to a temporary file in the same directory, then renames it into place.
    pub fn write_atomic(&self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let target = self.path(name);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        tmp.write_all(bytes)?;
        tmp.as_file().sync_all()?;
        tmp.persist(&target).map_err(|e| CliError::Io(format!("cannot write {}: {e}", target.display())))?;
        Ok(target)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
        bytes.push(b'\n');
        self.write_atomic(name, &bytes)
    }

    pub fn write_csv(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).map_err(|e| CliError::Io(e.to_string()))?;
        for r in rows {
            w.write_record(r).map_err(|e| CliError::Io(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
        self.write_atomic(name, &bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(opt_num(None), "");
    }

    #[test]
    fn provenance_hash_is_stable() {
        let a = Provenance::new("solve", 1, "alpha = 1");
        let b = Provenance::new("solve", 1, "alpha = 1");
        assert_eq!(a.config_sha256, b.config_sha256);
        assert_ne!(a.config_sha256, Provenance::new("solve", 1, "alpha = 2").config_sha256);
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let out = OutDir::create(&dir.path().join("nested")).unwrap();
        out.write_atomic("a.txt", b"one").unwrap();
        out.write_atomic("a.txt", b"two").unwrap();
        assert_eq!(std::fs::read(out.path("a.txt")).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path().join("nested")).unwrap().count(), 1);
    }
}
