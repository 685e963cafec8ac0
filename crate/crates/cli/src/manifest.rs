use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const FILE: &str = "manifest.json";

/// Record of one CLI run: everything that determines the outputs, plus
/// digests of the files produced.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub seed: u64,
    pub config_hash: Option<String>,
    pub inputs: BTreeMap<String, String>,
    pub manifest_hash: String,
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

impl Manifest {
    pub fn new(command: &str, seed: u64) -> Self {
        Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            seed,
            config_hash: None,
            inputs: BTreeMap::new(),
            manifest_hash: String::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn input(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.inputs.insert(key.to_string(), value.to_string());
        self
    }

    /// Records an input file by content digest.
    pub fn input_file(&mut self, key: &str, path: &Path) -> Result<&mut Self> {
        let d = file_digest(path)?;
        self.inputs.insert(key.to_string(), format!("{}@sha256:{d}", path.display()));
        Ok(self)
    }

    /// Digests every regular file in `dir` except the manifest and writes it.
    pub fn write(mut self, dir: &Path) -> Result<()> {
        let key = serde_json::json!([self.tool, self.version, self.command, self.seed, self.config_hash, self.inputs]);
        self.manifest_hash = sha256_hex(key.to_string().as_bytes());
        let mut entries: Vec<_> = std::fs::read_dir(dir)
            .with_context(|| format!("listing {}", dir.display()))?
            .filter_map(|e| e.ok())
            .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
            .map(|e| e.path())
            .collect();
        entries.sort();
        for p in entries {
            let name = p.file_name().unwrap().to_string_lossy().to_string();
            if name == FILE || name.ends_with(".tmp") {
                continue;
            }
            self.outputs.insert(name, file_digest(&p)?);
        }
        let path = dir.join(FILE);
        let text = serde_json::to_string_pretty(&self)?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}
