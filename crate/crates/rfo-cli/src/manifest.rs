//! Run directories: every written file is hashed into manifest.json.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::CliError;

#[derive(Debug, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub config: Config,
    pub config_sha256: String,
    pub seed: Option<u64>,
    pub rfo_version: String,
    pub cli_version: String,
    pub files: Vec<FileEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub struct RunDir {
    root: PathBuf,
    command: String,
    config: Config,
    files: Vec<FileEntry>,
}

impl RunDir {
    pub fn create(root: &Path, command: &str, config: &Config) -> Result<RunDir, CliError> {
        std::fs::create_dir_all(root)?;
        Ok(RunDir { root: root.to_path_buf(), command: command.to_string(), config: config.clone(), files: Vec::new() })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        std::fs::write(self.root.join(name), bytes)?;
        self.files.push(FileEntry { path: name.to_string(), bytes: bytes.len(), sha256: sha256_hex(bytes) });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(rfo::Error::from)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn finish(self) -> Result<PathBuf, CliError> {
        let canonical = serde_json::to_string(&self.config).map_err(rfo::Error::from)?;
        let manifest = Manifest {
            command: self.command,
            config_sha256: sha256_hex(canonical.as_bytes()),
            seed: self.config.seed,
            config: self.config,
            rfo_version: rfo::VERSION.to_string(),
            cli_version: env!("CARGO_PKG_VERSION").to_string(),
            files: self.files,
        };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(rfo::Error::from)?;
        text.push('\n');
        std::fs::write(self.root.join("manifest.json"), text)?;
        Ok(self.root)
    }
}
