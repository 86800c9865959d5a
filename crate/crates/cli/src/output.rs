//! Output directory with atomic writes and a content-hash manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use pixsim_core::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.json";

pub struct OutputDir {
    root: PathBuf,
    files: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    files: Vec<ManifestEntry<'a>>,
}

#[derive(Serialize)]
struct ManifestEntry<'a> {
    path: &'a str,
    sha256: &'a str,
    bytes: usize,
}

impl OutputDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self {
            root,
            files: BTreeMap::new(),
        })
    }

    /// Writes `name` via a temporary sibling and rename, and records its hash.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.root.join(name);
        atomic_write(&path, bytes)?;
        self.files.insert(name.to_owned(), hex::encode(Sha256::digest(bytes)));
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    /// Writes `manifest.json` listing every file written so far, sorted.
    pub fn finish(self, command: &str) -> Result<PathBuf> {
        let sizes: BTreeMap<&str, usize> = self
            .files
            .keys()
            .map(|k| {
                Ok((
                    k.as_str(),
                    fs::metadata(self.root.join(k))
                        .map_err(|e| Error::io(&self.root, e))?
                        .len() as usize,
                ))
            })
            .collect::<Result<_>>()?;
        let manifest = Manifest {
            command,
            files: self
                .files
                .iter()
                .map(|(path, sha256)| ManifestEntry {
                    path,
                    sha256,
                    bytes: sizes[path.as_str()],
                })
                .collect(),
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        let path = self.root.join(MANIFEST);
        atomic_write(&path, text.as_bytes())?;
        Ok(path)
    }
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
