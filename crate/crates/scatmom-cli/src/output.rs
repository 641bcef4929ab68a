//! Run manifests and atomic output files.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Provenance sidecar written next to every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub parameters: BTreeMap<String, String>,
    pub seed: Option<u64>,
    /// SHA-256 of the input file, when the command reads one.
    pub input_hash: Option<String>,
    pub tool_version: String,
    pub output: String,
    pub output_hash: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

/// Flattens a serializable argument struct into `key → value` strings.
pub fn flat_parameters<T: Serialize>(args: &T) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    flatten("", &serde_json::to_value(args).expect("arguments serialize"), &mut out);
    out
}

fn flatten(prefix: &str, v: &serde_json::Value, out: &mut BTreeMap<String, String>) {
    match v {
        serde_json::Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        serde_json::Value::Null => {}
        serde_json::Value::String(s) => {
            out.insert(prefix.to_string(), s.clone());
        }
        other => {
            out.insert(prefix.to_string(), other.to_string());
        }
    }
}

/// Shared manifest fields for one command invocation.
pub struct Provenance {
    pub command: &'static str,
    pub parameters: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub input_hash: Option<String>,
}

impl Provenance {
    /// Writes `bytes` to `path` and its manifest to `<path>.manifest.json`,
    /// each through a temporary file renamed into place.
    pub fn emit(&self, path: &Path, bytes: &[u8]) -> Result<(), CliError> {
        write_atomic(path, bytes)?;
        let manifest = RunManifest {
            command: self.command.to_string(),
            parameters: self.parameters.clone(),
            seed: self.seed,
            input_hash: self.input_hash.clone(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            output: path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            output_hash: sha256_hex(bytes),
        };
        let json = serde_json::to_string_pretty(&manifest)? + "\n";
        write_atomic(&manifest_path(path), json.as_bytes())
    }
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    path.with_file_name(name)
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| CliError::Io(e.error))?;
    Ok(())
}
