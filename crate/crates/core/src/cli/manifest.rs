//! Run manifest: config hash, code version and a checksummed file inventory.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fsio::{file_sha256, write_atomic};

pub const MANIFEST_FILE: &str = "manifest.json";

/// `git describe` output captured at build time, or the crate version.
pub const CODE_VERSION: &str = env!("PHILAB_CODE_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub config_sha256: String,
    pub code_version: String,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    /// Inventories every file under `dir` except the manifest itself and
    /// in-flight temp files, in sorted path order.
    pub fn collect(dir: &Path, config_sha256: &str) -> Result<Self> {
        let config_sha256 = config_sha256.to_string();
        let mut files = Vec::new();
        walk(dir, dir, &mut files)?;
        files.sort_by(|a, b| a.path.cmp(&b.path));
        Ok(RunManifest {
            run_id: config_sha256[..12].to_string(),
            config_sha256,
            code_version: CODE_VERSION.to_string(),
            files,
        })
    }

    pub fn file(&self, path: &str) -> Option<&FileEntry> {
        self.files.iter().find(|f| f.path == path)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes())
    }
}

fn walk(root: &Path, dir: &Path, out: &mut Vec<FileEntry>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            walk(root, &path, out)?;
            continue;
        }
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if name == MANIFEST_FILE || (name.starts_with('.') && name.ends_with(".tmp")) {
            continue;
        }
        let rel = path.strip_prefix(root).unwrap_or(&path);
        out.push(FileEntry {
            path: rel.to_string_lossy().replace('\\', "/"),
            sha256: file_sha256(&path)?,
            bytes: fs::metadata(&path)?.len(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fsio::sha256_hex;

    #[test]
    fn inventory_is_sorted_and_skips_itself() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("b.csv"), "x").unwrap();
        fs::create_dir(dir.path().join("sub")).unwrap();
        fs::write(dir.path().join("sub/a.txt"), "").unwrap();
        fs::write(dir.path().join(".c.csv.tmp"), "junk").unwrap();
        let m = RunManifest::collect(dir.path(), &sha256_hex(b"{}")).unwrap();
        m.write(dir.path()).unwrap();
        let again = RunManifest::collect(dir.path(), &sha256_hex(b"{}")).unwrap();
        assert_eq!(m, again);
        let paths: Vec<&str> = m.files.iter().map(|f| f.path.as_str()).collect();
        assert_eq!(paths, ["b.csv", "sub/a.txt"]);
        assert_eq!(m.file("sub/a.txt").unwrap().sha256, sha256_hex(b""));
        assert_eq!(m.run_id.len(), 12);
    }
}
