//! Run manifests: what went into a command and what came out.
//!
//! A manifest holds the command, tool version, seed, the merged
//! configuration and SHA-256 digests of every input and output file. It
//! carries no timestamps or absolute work-directory paths, so reruns with
//! the same inputs produce the same manifest.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

pub struct Manifest {
    command: String,
    config: RunConfig,
    extra: BTreeMap<String, String>,
    inputs: Vec<(String, PathBuf)>,
    outputs: Vec<(String, PathBuf)>,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Manifest {
            command: command.to_string(),
            config: config.clone(),
            extra: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Command-specific arguments that affect the outputs.
    pub fn arg(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.extra.insert(key.to_string(), value.to_string());
        self
    }

    pub fn input(&mut self, label: &str, path: &Path) -> &mut Self {
        self.inputs.push((label.to_string(), path.to_path_buf()));
        self
    }

    pub fn output(&mut self, label: &str, path: &Path) -> &mut Self {
        self.outputs.push((label.to_string(), path.to_path_buf()));
        self
    }

    fn digests(files: &[(String, PathBuf)]) -> Result<Value> {
        let mut map = serde_json::Map::new();
        for (label, path) in files {
            let name = path
                .file_name()
                .map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
            map.insert(label.clone(), json!({ "file": name, "sha256": sha256_file(path)? }));
        }
        Ok(Value::Object(map))
    }

    pub fn to_json(&self) -> Result<String> {
        let seed: u64 = self.config.get("seed")?;
        let value = json!({
            "command": self.command,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": seed,
            "config": self.config.pairs(),
            "args": self.extra,
            "inputs": Self::digests(&self.inputs)?,
            "outputs": Self::digests(&self.outputs)?,
        });
        Ok(serde_json::to_string_pretty(&value)? + "\n")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).with_context(|| format!("writing {}", path.display()))
    }
}
