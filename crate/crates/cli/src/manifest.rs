//! Run manifests and staged output files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FileEntry {
    pub path: String,
    /// Absent for files whose content legitimately differs between reruns.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
}

/// What a run read, what it wrote and the settings it used.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub inputs: Vec<FileEntry>,
    /// Paths relative to the output directory.
    pub outputs: Vec<FileEntry>,
}

/// Files produced by a command, held in memory until the command has
/// finished so that a failure leaves nothing behind.
#[derive(Default)]
pub struct Outputs {
    files: Vec<(String, Vec<u8>, bool)>,
}

impl Outputs {
    pub fn add(&mut self, name: impl Into<String>, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.into(), bytes.into(), true));
    }

    /// A file that carries timing or other run-dependent content.
    pub fn add_volatile(&mut self, name: impl Into<String>, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.into(), bytes.into(), false));
    }

    /// Writes every file plus the manifest into `dir`.
    pub fn commit(self, dir: &Path, mut manifest: RunManifest) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let mut written = Vec::new();
        for (name, bytes, stable) in self.files {
            let path = dir.join(&name);
            fs::write(&path, &bytes).with_context(|| format!("cannot write {}", path.display()))?;
            manifest.outputs.push(FileEntry {
                path: name,
                sha256: stable.then(|| sha256_hex(&bytes)),
            });
            written.push(path);
        }
        let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        json.push('\n');
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, json).with_context(|| format!("cannot write {}", path.display()))?;
        written.push(path);
        Ok(written)
    }
}

/// Reads an input file and records its checksum.
pub fn read_input(path: &Path, inputs: &mut Vec<FileEntry>) -> Result<Vec<u8>> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    inputs.push(FileEntry {
        path: path.display().to_string(),
        sha256: Some(sha256_hex(&bytes)),
    });
    Ok(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn volatile_files_carry_no_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = Outputs::default();
        out.add("a.txt", "x");
        out.add_volatile("b.csv", "1.234");
        let manifest = RunManifest {
            command: "t".into(),
            seed: 1,
            config: BTreeMap::new(),
            inputs: vec![],
            outputs: vec![],
        };
        out.commit(dir.path(), manifest).unwrap();
        let json: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(json["outputs"][0]["sha256"], sha256_hex(b"x"));
        assert!(json["outputs"][1].get("sha256").is_none());
    }
}
