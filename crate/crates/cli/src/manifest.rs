//! Run manifest: the completion marker written after every other file.

use std::fs;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use ctf_sim::device::ModelParams;

use crate::config::Knobs;
use crate::error::CliError;

pub const MANIFEST_NAME: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmittedFile {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
    /// Hash with `#` comment lines removed; independent of the timestamp.
    pub content_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub seed: u64,
    pub params_file: String,
    pub params_sha256: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub protocol_file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub protocol_sha256: Option<String>,
    pub output_dir: String,
    pub overrides: Vec<[String; 2]>,
    pub started_at: String,
    pub duration_s: f64,
    pub threads: usize,
    pub notes: Vec<String>,
    pub params: ModelParams,
    pub settings: Knobs,
    pub files: Vec<EmittedFile>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hash of the lines that do not start with `#`.
pub fn content_sha256(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    for line in bytes.split_inclusive(|b| *b == b'\n') {
        if !line.starts_with(b"#") {
            h.update(line);
        }
    }
    hex::encode(h.finalize())
}

impl EmittedFile {
    pub fn describe(name: &str, bytes: &[u8]) -> Self {
        Self {
            path: name.to_string(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(bytes),
            content_sha256: content_sha256(bytes),
        }
    }
}

impl RunManifest {
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("manifest fields are serializable")
    }

    /// Writes to a temporary name and renames, so a manifest is either
    /// complete or absent.
    pub fn write_atomic(&self, dir: &Path) -> Result<(), CliError> {
        let tmp = dir.join(format!(".{MANIFEST_NAME}.tmp"));
        let dest = dir.join(MANIFEST_NAME);
        fs::write(&tmp, self.to_toml_string()).map_err(|e| CliError::io(&tmp, e))?;
        fs::rename(&tmp, &dest).map_err(|e| CliError::io(&dest, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn content_hash_ignores_comments() {
        let a = b"# generated 2020-01-01T00:00:00Z\nx,y\n1,2\n";
        let b = b"# generated 2031-05-05T10:00:00Z\nx,y\n1,2\n";
        assert_ne!(sha256_hex(a), sha256_hex(b));
        assert_eq!(content_sha256(a), content_sha256(b));
        assert_eq!(content_sha256(a), sha256_hex(b"x,y\n1,2\n"));
    }

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
