use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{PipelineError, Result};

pub const MANIFEST_NAME: &str = "manifest.json";

/// Collects a command's outputs and writes them, plus `manifest.json`
/// listing every file with its SHA-256, into one directory.
#[derive(Debug, Default)]
pub struct OutputSet {
    files: BTreeMap<String, Vec<u8>>,
}

impl OutputSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, contents: impl Into<Vec<u8>>) {
        self.files.insert(name.into(), contents.into());
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Option<&[u8]> {
        self.files.get(name).map(Vec::as_slice)
    }

    pub fn manifest(&self) -> String {
        let mut out = String::from("{\n  \"files\": [");
        for (i, (name, bytes)) in self.files.iter().enumerate() {
            out.push_str(if i == 0 { "\n" } else { ",\n" });
            out.push_str(&format!(
                "    {{\"path\": {}, \"sha256\": \"{}\"}}",
                serde_json::to_string(name).expect("string serializes"),
                hex::encode(Sha256::digest(bytes))
            ));
        }
        out.push_str(if self.files.is_empty() { "]\n}\n" } else { "\n  ]\n}\n" });
        out
    }

    /// Writes everything under `dir`; returns the written paths.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io("output", dir, e))?;
        let mut written = Vec::new();
        let manifest = self.manifest();
        let all = self
            .files
            .iter()
            .map(|(n, b)| (n.as_str(), b.as_slice()))
            .chain([(MANIFEST_NAME, manifest.as_bytes())]);
        for (name, bytes) in all {
            let path = dir.join(name);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| PipelineError::io("output", parent, e))?;
            }
            std::fs::write(&path, bytes).map_err(|e| PipelineError::io("output", &path, e))?;
            written.push(path);
        }
        Ok(written)
    }
}
