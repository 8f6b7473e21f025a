//! `manifest.json`: per command, the config hash, seed and checksums of
//! every artifact written.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_err, CliResult};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    config_sha256: String,
    seed: Option<u64>,
    artifacts: BTreeMap<String, String>,
}

/// One entry per command that wrote into the directory, so `train` and
/// `evaluate` can share an output directory.
#[derive(Debug, Default, Serialize, Deserialize)]
struct Manifest {
    commands: BTreeMap<String, Entry>,
}

/// Collects outputs under one directory and records their checksums.
pub struct OutDir {
    root: PathBuf,
    artifacts: BTreeMap<String, String>,
}

impl OutDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(root).map_err(io_err(root))?;
        Ok(Self {
            root: root.to_path_buf(),
            artifacts: BTreeMap::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        std::fs::write(&path, bytes).map_err(io_err(&path))?;
        self.artifacts.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Records this command in `manifest.json` with the hash of the
    /// canonical config bytes, keeping entries of other commands.
    pub fn finish(self, command: &str, config: &[u8], seed: Option<u64>) -> CliResult<()> {
        let path = self.path("manifest.json");
        let mut manifest: Manifest = std::fs::read_to_string(&path)
            .ok()
            .and_then(|t| serde_json::from_str(&t).ok())
            .unwrap_or_default();
        manifest.commands.insert(
            command.to_string(),
            Entry {
                config_sha256: sha256_hex(config),
                seed,
                artifacts: self.artifacts,
            },
        );
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
        std::fs::write(&path, text + "\n").map_err(io_err(&path))
    }
}
