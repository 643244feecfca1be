//! Run manifests and run-directory locking.
//!
//! ```text
//! [run]
//! version = v0.1.0
//! command = train
//! seed = 0
//! threads = 1
//! wall_seconds = 12.5
//! [config]
//! <canonical config text>
//! [files]
//! history.csv = <sha256 hex> <bytes>
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::{self, ConfigError, ExperimentConfig};
use crate::error::CliError;

pub const MANIFEST: &str = "manifest.txt";
pub const LOCK: &str = ".lock";

/// `git describe`-style version, taken from the build environment when set.
pub fn version() -> String {
    option_env!("LANDAU_GIT_DESCRIBE").map_or_else(|| format!("v{}", env!("CARGO_PKG_VERSION")), str::to_string)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub threads: usize,
    pub wall_seconds: f64,
    pub config: String,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "[run]\nversion = {}\ncommand = {}\nseed = {}\nthreads = {}\nwall_seconds = {:.3}\n[config]\n{}[files]\n",
            self.version, self.command, self.seed, self.threads, self.wall_seconds, self.config
        );
        for f in &self.files {
            s.push_str(&format!("{} = {} {}\n", f.name, f.sha256, f.bytes));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let bad = |m: &str| CliError::Io(format!("malformed manifest: {m}"));
        let (run, rest) = text.split_once("[config]\n").ok_or_else(|| bad("no [config] section"))?;
        let (config, files) = rest.rsplit_once("[files]\n").ok_or_else(|| bad("no [files] section"))?;
        let field = |key: &str| {
            run.lines()
                .filter_map(|l| l.split_once(" = "))
                .find(|(k, _)| *k == key)
                .map(|(_, v)| v.to_string())
                .ok_or_else(|| bad(key))
        };
        let mut entries = Vec::new();
        for line in files.lines().filter(|l| !l.trim().is_empty()) {
            let (name, v) = line.split_once(" = ").ok_or_else(|| bad(line))?;
            let (sha, n) = v.split_once(' ').ok_or_else(|| bad(line))?;
            entries.push(FileEntry { name: name.into(), sha256: sha.into(), bytes: n.parse().map_err(|_| bad(line))? });
        }
        Ok(RunManifest {
            version: field("version")?,
            command: field("command")?,
            seed: field("seed")?.parse().map_err(|_| bad("seed"))?,
            threads: field("threads")?.parse().map_err(|_| bad("threads"))?,
            wall_seconds: field("wall_seconds")?.parse().map_err(|_| bad("wall_seconds"))?,
            config: config.to_string(),
            files: entries,
        })
    }

    /// The effective configuration recorded in the manifest.
    pub fn effective_config(&self) -> Result<ExperimentConfig, ConfigError> {
        config::parse(&self.config, None)
    }

    /// Recomputes every listed checksum under `dir`.
    pub fn verify_files(&self, dir: &Path) -> Result<(), CliError> {
        for f in &self.files {
            let path = dir.join(&f.name);
            let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
            if sha256_hex(&bytes) != f.sha256 || bytes.len() as u64 != f.bytes {
                return Err(CliError::Io(format!("{}: checksum mismatch", path.display())));
            }
        }
        Ok(())
    }
}

/// Exclusive claim on a run directory, released on drop.
pub struct RunDir {
    pub path: PathBuf,
    files: Vec<String>,
}

impl RunDir {
    pub fn open(path: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(path).map_err(|e| CliError::io(path, e))?;
        let lock = path.join(LOCK);
        fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&lock)
            .map_err(|e| CliError::io(&lock, format!("run directory is in use ({e})")))?;
        Ok(RunDir { path: path.to_path_buf(), files: Vec::new() })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let p = self.path.join(name);
        fs::write(&p, bytes).map_err(|e| CliError::io(&p, e))?;
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(())
    }

    /// Writes the manifest over every file written so far.
    pub fn finish(&mut self, mut manifest: RunManifest) -> Result<RunManifest, CliError> {
        manifest.files.clear();
        for name in &self.files {
            let p = self.path.join(name);
            let bytes = fs::read(&p).map_err(|e| CliError::io(&p, e))?;
            manifest.files.push(FileEntry { name: name.clone(), sha256: sha256_hex(&bytes), bytes: bytes.len() as u64 });
        }
        let p = self.path.join(MANIFEST);
        fs::write(&p, manifest.to_text()).map_err(|e| CliError::io(&p, e))?;
        Ok(manifest)
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(self.path.join(LOCK));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_text_round_trips() {
        let cfg = crate::presets::get("bkw2d-smoke").unwrap();
        let m = RunManifest {
            version: version(),
            command: "train".into(),
            seed: 4,
            threads: 2,
            wall_seconds: 1.5,
            config: cfg.to_text(),
            files: vec![FileEntry { name: "a.csv".into(), sha256: sha256_hex(b"x"), bytes: 1 }],
        };
        let back = RunManifest::parse(&m.to_text()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.effective_config().unwrap(), cfg);
    }

    #[test]
    fn sha256_of_empty_input() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }
}
