//! Deterministic file writers and provenance sidecars.

use std::fs;
use std::path::{Path, PathBuf};

use momentkit::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;

pub const TOOL_NAME: &str = "momentkit";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| io_err(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        line: e.line(),
        message: format!("{}: {e}", path.display()),
    })
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

/// Pretty JSON with a trailing newline.
pub fn json_text<T: Serialize>(value: &T) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    Ok(text)
}

/// One compact JSON value per line.
pub fn jsonl_text<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InputDigest {
    /// File name only, so records do not depend on the working directory.
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Provenance<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub config_sha256: String,
    pub config: &'a PipelineConfig,
    pub inputs: Vec<InputDigest>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub output_sha256: String,
}

/// Collects input digests for one command invocation.
pub struct Run<'a> {
    pub command: &'a str,
    pub config: &'a PipelineConfig,
    pub seed: Option<u64>,
    inputs: Vec<InputDigest>,
}

impl<'a> Run<'a> {
    pub fn new(command: &'a str, config: &'a PipelineConfig, seed: Option<u64>) -> Self {
        Run {
            command,
            config,
            seed,
            inputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let bytes = read_bytes(path)?;
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        self.input_bytes(name, &bytes);
        Ok(())
    }

    pub fn input_bytes(&mut self, name: String, bytes: &[u8]) {
        self.inputs.push(InputDigest {
            name,
            sha256: sha256_hex(bytes),
        });
    }

    /// Writes `bytes` to `path` and its `<path>.provenance.json` sidecar.
    pub fn emit(&self, path: &Path, bytes: &[u8]) -> Result<()> {
        write_bytes(path, bytes)?;
        let record = Provenance {
            tool: TOOL_NAME,
            version: VERSION,
            command: self.command,
            config_sha256: self.config.digest(),
            config: self.config,
            inputs: self.inputs.clone(),
            seed: self.seed,
            output_sha256: sha256_hex(bytes),
        };
        write_bytes(&sidecar_path(path), json_text(&record)?.as_bytes())
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".provenance.json");
    path.with_file_name(name)
}
