//! Run manifests and atomic file output.

use std::path::{Path, PathBuf};
use std::time::Duration;

use depthlift_core::{Error, Result};
use serde::Serialize;

pub const MANIFEST_FILE: &str = "run_manifest.json";

/// Everything needed to re-run a command.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: toml::Value,
    pub seed: u64,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub toolkit_version: String,
    pub wall_clock_seconds: f64,
    /// `"ok"`, or the error that stopped the run.
    pub status: String,
}

impl RunManifest {
    pub fn new(
        command: &str,
        argv: Vec<String>,
        config: &impl Serialize,
        seed: u64,
    ) -> Result<Self> {
        let config = toml::Value::try_from(config)
            .map_err(|e| Error::Config(format!("cannot snapshot config: {e}")))?;
        Ok(Self {
            command: command.to_string(),
            argv,
            config,
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_clock_seconds: 0.0,
            status: "ok".to_string(),
        })
    }

    pub fn finish(&mut self, elapsed: Duration, error: Option<&Error>) {
        self.wall_clock_seconds = elapsed.as_secs_f64();
        if let Some(e) = error {
            self.status = format!("failed: {e}");
        }
    }

    pub fn write(&self, out_dir: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Numeric(format!("cannot serialize manifest: {e}")))?;
        write_atomic(&out_dir.join(MANIFEST_FILE), json.as_bytes())
    }
}

fn temp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    path.with_file_name(name)
}

/// Produce `path` through `write` on a sibling temporary file, then rename,
/// so readers never see a half-written artifact.
pub fn atomically(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let tmp = temp_path(path);
    if let Err(e) = write(&tmp) {
        let _ = std::fs::remove_file(&tmp);
        return Err(e);
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    atomically(path, |tmp| {
        std::fs::write(tmp, bytes).map_err(|e| Error::io(tmp, e))
    })
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_leaves_no_temporary() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        write_atomic(&p, b"hello").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"hello");
        assert!(!temp_path(&p).exists());
    }

    #[test]
    fn failed_write_keeps_previous_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        write_atomic(&p, b"old").unwrap();
        let r = atomically(&p, |tmp| {
            std::fs::write(tmp, b"half").unwrap();
            Err(Error::Numeric("boom".into()))
        });
        assert!(r.is_err());
        assert_eq!(std::fs::read(&p).unwrap(), b"old");
        assert!(!temp_path(&p).exists());
    }

    #[test]
    fn manifest_records_failure() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::new(
            "synth",
            vec!["depthlift".into()],
            &crate::config::SynthConfig::default(),
            3,
        )
        .unwrap();
        m.finish(
            Duration::from_millis(1500),
            Some(&Error::Numeric("diverged".into())),
        );
        m.write(dir.path()).unwrap();
        let v: serde_json::Value =
            serde_json::from_slice(&std::fs::read(dir.path().join(MANIFEST_FILE)).unwrap())
                .unwrap();
        assert_eq!(v["command"], "synth");
        assert_eq!(v["seed"], 3);
        assert_eq!(v["config"]["subjects"], 7);
        assert!(v["status"].as_str().unwrap().contains("diverged"));
    }
}
