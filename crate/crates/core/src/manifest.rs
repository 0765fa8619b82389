//! Run manifests: config hash plus content hashes of every input and output.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::hashing::git_blob_sha256;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
}

fn display_path(path: &Path, base: &Path) -> String {
    path.strip_prefix(base).unwrap_or(path).to_string_lossy().replace('\\', "/")
}

/// Hashes `path`, or every file beneath it when it is a directory.
pub fn hash_path(path: &Path, base: &Path) -> std::io::Result<Vec<FileEntry>> {
    let mut files = Vec::new();
    collect(path, &mut files)?;
    files.sort();
    files
        .into_iter()
        .map(|f| {
            let bytes = std::fs::read(&f)?;
            Ok(FileEntry {
                path: display_path(&f, base),
                bytes: bytes.len() as u64,
                sha256: git_blob_sha256(&bytes),
            })
        })
        .collect()
}

fn collect(path: &Path, out: &mut Vec<PathBuf>) -> std::io::Result<()> {
    if path.is_dir() {
        for entry in std::fs::read_dir(path)? {
            collect(&entry?.path(), out)?;
        }
    } else {
        out.push(path.to_path_buf());
    }
    Ok(())
}

impl Manifest {
    /// Builds a manifest; paths are listed relative to `base` when beneath it.
    pub fn build(command: &str, config_hash: &str, inputs: &[PathBuf], outputs: &[PathBuf], base: &Path) -> std::io::Result<Self> {
        let hash_all = |paths: &[PathBuf]| -> std::io::Result<Vec<FileEntry>> {
            let mut v = Vec::new();
            for p in paths {
                v.extend(hash_path(p, base)?);
            }
            v.sort_by(|a, b| a.path.cmp(&b.path));
            v.dedup();
            Ok(v)
        };
        Ok(Manifest {
            command: command.to_string(),
            config_hash: config_hash.to_string(),
            inputs: hash_all(inputs)?,
            outputs: hash_all(outputs)?,
        })
    }

    pub fn file_name(command: &str) -> String {
        format!("manifest.{command}.json")
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<PathBuf> {
        let path = dir.join(Self::file_name(&self.command));
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        std::fs::write(&path, s)?;
        Ok(path)
    }

    /// Output entries whose file is missing or whose content changed.
    pub fn verify_outputs(&self, base: &Path) -> Vec<String> {
        self.outputs
            .iter()
            .filter(|e| std::fs::read(base.join(&e.path)).map(|b| git_blob_sha256(&b) != e.sha256).unwrap_or(true))
            .map(|e| e.path.clone())
            .collect()
    }
}
