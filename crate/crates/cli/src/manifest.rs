use clic_core::Config;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

/// What a command did, with enough context to redo it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Config,
    pub seed: u64,
    pub started: String,
    pub finished: Option<String>,
    pub library: Option<String>,
    /// SHA-256 over `blob <len>\0<bytes>` of the library file.
    pub library_hash: Option<String>,
    pub artifacts: Vec<String>,
    pub version: String,
}

/// Content hash in the style of a git blob id, with SHA-256.
pub fn blob_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

impl RunManifest {
    pub fn start(command: &str, cfg: &Config, library: Option<&Path>) -> anyhow::Result<Self> {
        let library_hash = match library {
            Some(p) => Some(blob_hash(&std::fs::read(p).map_err(|e| clic_core::Error::Io(e))?)),
            None => None,
        };
        Ok(Self {
            command: command.into(),
            config: cfg.clone(),
            seed: cfg.seed,
            started: chrono::Utc::now().to_rfc3339(),
            finished: None,
            library: library.map(|p| p.display().to_string()),
            library_hash,
            artifacts: Vec::new(),
            version: env!("CARGO_PKG_VERSION").into(),
        })
    }

    pub fn finish(&mut self) {
        self.finished = Some(chrono::Utc::now().to_rfc3339());
    }

    pub fn write(&self, path: &Path) -> anyhow::Result<()> {
        Ok(clic_core::util::write_json(path, self)?)
    }
}
