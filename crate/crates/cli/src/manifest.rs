//! One JSON record per run: what was asked, with which settings, over which
//! inputs, producing which outputs.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::failure::{Classify, CmdResult};

#[derive(Debug, Clone, Serialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: Option<String>,
}

impl FileRecord {
    /// Hashes the file if it exists; directories are recorded without a hash.
    pub fn of(path: &Path) -> Self {
        let sha256 = fs::read(path).ok().map(|bytes| hex::encode(Sha256::digest(&bytes)));
        FileRecord { path: path.display().to_string(), sha256 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub version: &'static str,
    pub config: Value,
    pub seed: Option<u64>,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub results: Value,
    pub started_at: String,
    pub finished_at: String,
    pub exit_code: u8,
}

pub fn now_rfc3339() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Collects manifest fields while a command runs.
#[derive(Debug, Clone)]
pub struct Recorder {
    pub command: String,
    pub config: Value,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub results: Value,
    started_at: String,
}

impl Recorder {
    pub fn new(command: &str) -> Self {
        Recorder {
            command: command.to_string(),
            config: Value::Null,
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            results: Value::Null,
            started_at: now_rfc3339(),
        }
    }

    pub fn config<T: Serialize>(&mut self, c: &T) {
        self.config = serde_json::to_value(c).unwrap_or(Value::Null);
    }

    pub fn results<T: Serialize>(&mut self, r: &T) {
        self.results = serde_json::to_value(r).unwrap_or(Value::Null);
    }

    pub fn input(&mut self, p: impl Into<PathBuf>) {
        self.inputs.push(p.into());
    }

    pub fn output(&mut self, p: impl Into<PathBuf>) {
        self.outputs.push(p.into());
    }

    /// Where the manifest goes: the explicit path, else beside the first
    /// output artifact, else `duet-<command>.manifest.json` in the working
    /// directory.
    pub fn default_path(&self) -> PathBuf {
        match self.outputs.first() {
            Some(p) => {
                let mut name = p.file_name().map(|n| n.to_os_string()).unwrap_or_default();
                name.push(".manifest.json");
                p.with_file_name(name)
            }
            None => PathBuf::from(format!("duet-{}.manifest.json", self.command.replace(' ', "-"))),
        }
    }

    pub fn finish(self, path: Option<&Path>, exit_code: u8) -> CmdResult<PathBuf> {
        let target = path.map(Path::to_path_buf).unwrap_or_else(|| self.default_path());
        let m = RunManifest {
            command: self.command,
            argv: std::env::args().collect(),
            version: env!("CARGO_PKG_VERSION"),
            config: self.config,
            seed: self.seed,
            inputs: self.inputs.iter().map(|p| FileRecord::of(p)).collect(),
            outputs: self.outputs.iter().map(|p| FileRecord::of(p)).collect(),
            results: self.results,
            started_at: self.started_at,
            finished_at: now_rfc3339(),
            exit_code,
        };
        let text = serde_json::to_string_pretty(&m).expect("manifest serializes");
        fs::write(&target, text + "\n").runtime(format!("cannot write manifest {}", target.display()))?;
        Ok(target)
    }
}
