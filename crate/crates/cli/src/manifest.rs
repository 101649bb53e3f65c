//! Run manifests written next to every command's outputs.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::failure::{Failure, Outcome};

#[derive(Debug, Clone, Serialize)]
pub struct InputChecksum {
    pub role: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    /// Full argument vector, program name first.
    pub args: Vec<String>,
    pub version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub inputs: Vec<InputChecksum>,
    pub outputs: Vec<String>,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    #[serde(skip)]
    path: PathBuf,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn hash_into(hasher: &mut Sha256, path: &Path) -> Outcome<()> {
    let mut f = std::fs::File::open(path).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))?;
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))?;
        if n == 0 {
            return Ok(());
        }
        hasher.update(&buf[..n]);
    }
}

pub fn file_sha256(path: &Path) -> Outcome<String> {
    let mut h = Sha256::new();
    hash_into(&mut h, path)?;
    Ok(to_hex(&h.finalize()))
}

/// Digest of a dataset manifest followed by every image it lists, in order.
pub fn dataset_sha256(manifest: &Path) -> Outcome<String> {
    let mut h = Sha256::new();
    hash_into(&mut h, manifest)?;
    let text = std::fs::read_to_string(manifest).map_err(|e| Failure::runtime(format!("{}: {e}", manifest.display())))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("image,") {
            continue;
        }
        if let Some(image) = line.split(',').next() {
            let p = base.join(image.trim());
            if p.is_file() {
                hash_into(&mut h, &p)?;
            }
        }
    }
    Ok(to_hex(&h.finalize()))
}

fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl RunManifest {
    pub fn new(command: &str, path: PathBuf, seed: u64, config: serde_json::Value) -> Self {
        Self {
            command: command.into(),
            args: std::env::args().collect(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config,
            inputs: Vec::new(),
            outputs: Vec::new(),
            started_unix: now(),
            finished_unix: None,
            path,
        }
    }

    pub fn input_file(&mut self, role: &str, path: &Path) -> Outcome<()> {
        let sha256 = file_sha256(path)?;
        self.inputs.push(InputChecksum {
            role: role.into(),
            path: path.display().to_string(),
            sha256,
        });
        Ok(())
    }

    pub fn input_dataset(&mut self, role: &str, manifest: &Path) -> Outcome<()> {
        let sha256 = dataset_sha256(manifest)?;
        self.inputs.push(InputChecksum {
            role: role.into(),
            path: manifest.display().to_string(),
            sha256,
        });
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    pub fn write(&self) -> Outcome<()> {
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Failure::runtime(format!("{}: {e}", dir.display())))?;
        }
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&self.path, text + "\n").map_err(|e| Failure::runtime(format!("{}: {e}", self.path.display())))
    }

    /// Stamps the finish time and rewrites the file.
    pub fn finish(&mut self) -> Outcome<()> {
        self.finished_unix = Some(now());
        self.write()
    }
}
