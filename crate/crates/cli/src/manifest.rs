//! Run directories: output lock, digested artifacts and the run manifest.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use echolab::digest::{fnv1a64, hex};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TIMINGS_FILE: &str = "timings.json";
const LOCK_FILE: &str = ".echolab.lock";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub run_id: String,
    /// Resolved configuration with every default expanded.
    pub config: Value,
    /// Input files the run read, by resolved path, with their digests.
    pub inputs: BTreeMap<String, String>,
    /// Files written into the run directory, by relative path, with their digests.
    pub artifacts: BTreeMap<String, String>,
    pub results: Value,
    /// Digest of the compact JSON encoding of every other field.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
}

impl Manifest {
    pub fn compute_digest(&self) -> CliResult<String> {
        let mut body = self.clone();
        body.digest = None;
        let text = serde_json::to_string(&body).map_err(|e| CliError::Integrity(e.to_string()))?;
        Ok(hex(fnv1a64(text.as_bytes())))
    }

    pub fn seal(mut self) -> CliResult<Self> {
        self.digest = Some(self.compute_digest()?);
        Ok(self)
    }

    /// Reads a run's manifest and checks its own digest and every artifact's.
    pub fn load_verified(dir: &Path) -> CliResult<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path)
            .map_err(|e| CliError::Integrity(format!("cannot read {}: {e}", path.display())))?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| CliError::Integrity(format!("{} is not a valid manifest: {e}", path.display())))?;
        let stored = m
            .digest
            .clone()
            .ok_or_else(|| CliError::Integrity(format!("{} has no digest", path.display())))?;
        let computed = m.compute_digest()?;
        if stored != computed {
            return Err(CliError::Integrity(format!(
                "{}: stored digest {stored}, computed {computed}",
                path.display()
            )));
        }
        for (name, want) in &m.artifacts {
            let bytes = fs::read(dir.join(name))
                .map_err(|e| CliError::Integrity(format!("artifact {name} of {}: {e}", dir.display())))?;
            let got = hex(fnv1a64(&bytes));
            if &got != want {
                return Err(CliError::Integrity(format!(
                    "artifact {name} of {}: recorded digest {want}, file digest {got}",
                    dir.display()
                )));
            }
        }
        Ok(m)
    }
}

/// Exclusive claim on an output directory, released on drop.
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir)?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Locked(format!(
                "{} exists; another run is using {} (delete the file if that run is dead)",
                path.display(),
                dir.display()
            ))),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Collects artifacts and input digests while a command runs.
pub struct RunDir {
    pub dir: PathBuf,
    artifacts: BTreeMap<String, String>,
    inputs: BTreeMap<String, String>,
    _lock: OutputLock,
}

impl RunDir {
    pub fn open(dir: PathBuf) -> CliResult<Self> {
        let lock = OutputLock::acquire(&dir)?;
        Ok(Self {
            dir,
            artifacts: BTreeMap::new(),
            inputs: BTreeMap::new(),
            _lock: lock,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes `bytes` to `name` (relative, may contain subdirectories) and records its digest.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        self.artifacts.insert(name.to_string(), hex(fnv1a64(bytes)));
        Ok(())
    }

    pub fn record_input(&mut self, path: &Path) -> CliResult<()> {
        let bytes = fs::read(path)?;
        self.inputs.insert(path.display().to_string(), hex(fnv1a64(&bytes)));
        Ok(())
    }

    /// Writes the sealed manifest and the (non-reproducible) timings file.
    pub fn finish(self, command: &str, run_id: &str, config: Value, results: Value, seconds: f64) -> CliResult<Manifest> {
        let manifest = Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            run_id: run_id.to_string(),
            config,
            inputs: self.inputs,
            artifacts: self.artifacts,
            results,
            digest: None,
        }
        .seal()?;
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Integrity(e.to_string()))?;
        fs::write(self.dir.join(MANIFEST_FILE), text + "\n")?;
        let timings = serde_json::json!({ "command": command, "wall_seconds": seconds });
        fs::write(self.dir.join(TIMINGS_FILE), timings.to_string() + "\n")?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let lock = OutputLock::acquire(dir.path()).unwrap();
        assert!(matches!(OutputLock::acquire(dir.path()), Err(CliError::Locked(_))));
        drop(lock);
        OutputLock::acquire(dir.path()).unwrap();
    }

    #[test]
    fn tampering_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let mut run = RunDir::open(dir.path().to_path_buf()).unwrap();
        run.write("a.csv", b"x,y\n1,2\n").unwrap();
        run.finish("fid", "r", Value::Null, serde_json::json!({"fid": 0.25}), 0.0).unwrap();
        Manifest::load_verified(dir.path()).unwrap();

        let path = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, text.replace("0.25", "0.24")).unwrap();
        assert!(matches!(Manifest::load_verified(dir.path()), Err(CliError::Integrity(_))));

        fs::write(&path, text).unwrap();
        fs::write(dir.path().join("a.csv"), b"x,y\n1,3\n").unwrap();
        assert!(matches!(Manifest::load_verified(dir.path()), Err(CliError::Integrity(_))));
    }
}
