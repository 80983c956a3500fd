//! Output directory with atomic writes and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))?;
    let name = path.file_name().ok_or_else(|| CliError::runtime(format!("{}: not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(CliError::runtime(format!("{}: {e}", path.display())));
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config_sha256: &'a str,
    seed: u64,
    inputs: &'a BTreeMap<String, String>,
    outputs: &'a BTreeMap<String, String>,
}

/// Collects the files of one command run. Nothing touches the disk until
/// [`RunOutputs::commit`], so a failing command leaves no partial outputs.
#[derive(Debug)]
pub struct RunOutputs {
    root: PathBuf,
    files: BTreeMap<String, Vec<u8>>,
    inputs: BTreeMap<String, String>,
}

impl RunOutputs {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf(), files: BTreeMap::new(), inputs: BTreeMap::new() }
    }

    pub fn add_input(&mut self, role: &str, path: &Path) -> Result<(), CliError> {
        self.inputs.insert(role.to_string(), hash_file(path)?);
        Ok(())
    }

    pub fn put(&mut self, rel: impl Into<String>, bytes: Vec<u8>) {
        self.files.insert(rel.into(), bytes);
    }

    /// Renders with a writer-based exporter.
    pub fn put_with<F>(&mut self, rel: impl Into<String>, f: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut Vec<u8>) -> tradenet::Result<()>,
    {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.put(rel, buf);
        Ok(())
    }

    /// Writes every file, then `manifest_<command>.json` listing their
    /// hashes. The manifest carries no timestamps or paths, so reruns with
    /// the same inputs reproduce it byte for byte.
    pub fn commit(self, command: &str, config_sha256: &str, seed: u64) -> Result<PathBuf, CliError> {
        let mut hashes = BTreeMap::new();
        for (rel, bytes) in &self.files {
            write_atomic(&self.root.join(rel), bytes)?;
            hashes.insert(rel.clone(), sha256_hex(bytes));
        }
        let manifest = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config_sha256,
            seed,
            inputs: &self.inputs,
            outputs: &hashes,
        };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::runtime(e.to_string()))?;
        text.push('\n');
        let path = self.root.join(format!("manifest_{command}.json"));
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }
}
