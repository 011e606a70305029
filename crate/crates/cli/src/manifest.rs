use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

pub fn digest_file(path: &Path) -> std::io::Result<FileDigest> {
    let mut file = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    let mut bytes = 0u64;
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        bytes += n as u64;
    }
    let sha256 = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
    Ok(FileDigest { path: path.display().to_string(), sha256, bytes })
}

/// Everything needed to rerun a command: argv, effective config, seeds and
/// digests of what went in and came out.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: Vec<String>,
    pub config: serde_json::Value,
    pub seeds: serde_json::Map<String, serde_json::Value>,
    pub inputs: Vec<FileDigest>,
    pub artifacts: Vec<FileDigest>,
    pub started_at_unix: u64,
    pub finished_at_unix: u64,
    pub details: serde_json::Value,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub struct ManifestBuilder {
    started: u64,
    config: serde_json::Value,
    seeds: serde_json::Map<String, serde_json::Value>,
    inputs: Vec<PathBuf>,
    details: serde_json::Value,
}

impl ManifestBuilder {
    pub fn start() -> Self {
        ManifestBuilder {
            started: now(),
            config: serde_json::Value::Null,
            seeds: serde_json::Map::new(),
            inputs: Vec::new(),
            details: serde_json::Value::Null,
        }
    }

    pub fn config(&mut self, config: &impl Serialize) -> &mut Self {
        self.config = serde_json::to_value(config).expect("config serializes");
        self
    }

    pub fn seed(&mut self, name: &str, seed: u64) -> &mut Self {
        self.seeds.insert(name.into(), seed.into());
        self
    }

    pub fn input(&mut self, path: &Path) -> &mut Self {
        self.inputs.push(path.to_path_buf());
        self
    }

    pub fn details(&mut self, details: &impl Serialize) -> &mut Self {
        self.details = serde_json::to_value(details).expect("details serialize");
        self
    }

    /// Writes the manifest to `manifest_path`, digesting inputs and artifacts.
    pub fn write(&self, artifacts: &[&Path], manifest_path: &Path) -> std::io::Result<()> {
        let manifest = RunManifest {
            tool: env!("CARGO_BIN_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: std::env::args().collect(),
            config: self.config.clone(),
            seeds: self.seeds.clone(),
            inputs: self.inputs.iter().map(|p| digest_file(p)).collect::<Result<_, _>>()?,
            artifacts: artifacts.iter().map(|p| digest_file(p)).collect::<Result<_, _>>()?,
            started_at_unix: self.started,
            finished_at_unix: now(),
            details: self.details.clone(),
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        std::fs::write(manifest_path, json + "\n")
    }
}

/// `out.jsonl` -> `out.jsonl.manifest.json`
pub fn manifest_path_for(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    artifact.with_file_name(name)
}
