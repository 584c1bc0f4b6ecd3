//! Content-addressed run directories and their manifests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const RUNS_ENV: &str = "BELIEFKIT_RUNS";
pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_hash(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// Root for run directories: the flag, else the environment, else `./runs`.
pub fn runs_root(flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(RUNS_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub config: serde_json::Value,
    pub seed: u64,
    /// Input name to content hash.
    pub inputs: BTreeMap<String, String>,
    /// Artifact name to path relative to the run directory.
    pub artifacts: BTreeMap<String, String>,
    pub started_unix: u64,
    pub completed_unix: Option<u64>,
    /// Hash of command, config and input hashes; names the directory.
    pub content_hash: String,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// A run being executed inside its directory.
pub struct Run {
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

pub enum RunState {
    /// A completed run with this identity already exists.
    Done(Run),
    Fresh(Run),
}

impl Run {
    /// Opens `root/<command>-<hash>`. A completed directory is returned as is.
    pub fn open<C: Serialize>(
        root: &Path,
        command: &str,
        config: &C,
        seed: u64,
        inputs: BTreeMap<String, String>,
    ) -> Result<RunState> {
        let config = serde_json::to_value(config)?;
        let identity = serde_json::json!({ "command": command, "config": config, "seed": seed, "inputs": inputs });
        let content_hash = sha256_hex(serde_json::to_string(&identity)?.as_bytes());
        let run_id = format!("{command}-{}", &content_hash[..16]);
        let dir = root.join(&run_id);
        let manifest_path = dir.join(MANIFEST_FILE);
        if manifest_path.exists() {
            let m: RunManifest = serde_json::from_str(&std::fs::read_to_string(&manifest_path)?)?;
            if m.content_hash != content_hash {
                return Err(Error::Invalid(format!("run directory {} holds a different run", dir.display())));
            }
            if m.completed_unix.is_some() {
                return Ok(RunState::Done(Run { dir, manifest: m }));
            }
        }
        std::fs::create_dir_all(&dir)?;
        let manifest = RunManifest {
            run_id,
            command: command.into(),
            config,
            seed,
            inputs,
            artifacts: BTreeMap::new(),
            started_unix: now(),
            completed_unix: None,
            content_hash,
        };
        let run = Run { dir, manifest };
        run.write_manifest()?;
        Ok(RunState::Fresh(run))
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes `contents` to `file` and records it as artifact `name`.
    pub fn write_artifact(&mut self, name: &str, file: &str, contents: &[u8]) -> Result<PathBuf> {
        let p = self.path(file);
        std::fs::write(&p, contents)?;
        self.record(name, file);
        Ok(p)
    }

    pub fn record(&mut self, name: &str, file: &str) {
        self.manifest.artifacts.insert(name.into(), file.into());
    }

    pub fn artifact(&self, name: &str) -> Result<PathBuf> {
        self.manifest
            .artifacts
            .get(name)
            .map(|f| self.path(f))
            .ok_or_else(|| Error::Invalid(format!("run {} has no artifact `{name}`", self.manifest.run_id)))
    }

    fn write_manifest(&self) -> Result<()> {
        let mut s = serde_json::to_string_pretty(&self.manifest)?;
        s.push('\n');
        std::fs::write(self.dir.join(MANIFEST_FILE), s)?;
        Ok(())
    }

    pub fn complete(mut self) -> Result<Run> {
        self.manifest.completed_unix = Some(now());
        self.write_manifest()?;
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_identity_reuses_the_directory() {
        let root = tempfile::tempdir().unwrap();
        let inputs = BTreeMap::from([("store".to_string(), "abc".to_string())]);
        let RunState::Fresh(mut run) = Run::open(root.path(), "x", &serde_json::json!({"a": 1}), 3, inputs.clone()).unwrap() else {
            panic!("expected a fresh run")
        };
        run.write_artifact("report", "report.json", b"{}").unwrap();
        let done = run.complete().unwrap();
        match Run::open(root.path(), "x", &serde_json::json!({"a": 1}), 3, inputs.clone()).unwrap() {
            RunState::Done(again) => assert_eq!(again.dir, done.dir),
            RunState::Fresh(_) => panic!("completed run not reused"),
        }
        let RunState::Fresh(other) = Run::open(root.path(), "x", &serde_json::json!({"a": 2}), 3, inputs).unwrap() else {
            panic!("config change must give a new run")
        };
        assert_ne!(other.dir, done.dir);
    }
}
