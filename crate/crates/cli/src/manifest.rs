use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct FileHash {
    pub path: PathBuf,
    /// Git object id over `blob <len>\0<content>`, SHA-256 flavour.
    pub hash: String,
}

/// Record of one run, written next to its outputs.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: Option<PathBuf>,
    pub seed: u64,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<PathBuf>,
    pub timestamp: String,
}

pub fn git_blob_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    format!("{:x}", h.finalize())
}

impl RunManifest {
    pub fn new(command: &str, argv: &[String], config: Option<&Path>, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            argv: argv.to_vec(),
            config: config.map(Path::to_path_buf),
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            timestamp: String::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> std::io::Result<()> {
        if self.inputs.iter().any(|f| f.path == path) {
            return Ok(());
        }
        let hash = git_blob_hash(&std::fs::read(path)?);
        self.inputs.push(FileHash {
            path: path.to_path_buf(),
            hash,
        });
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Stamps the current time and writes `<out>/<command>.manifest.json`.
    pub fn write(mut self, out: &Path) -> std::io::Result<PathBuf> {
        self.timestamp = chrono::Utc::now().to_rfc3339();
        let path = out.join(format!("{}.manifest.json", self.command));
        let json = serde_json::to_string_pretty(&self).expect("manifest serializes");
        std::fs::write(&path, json + "\n")?;
        Ok(path)
    }
}
