//! Append-only run directories: each run gets a fresh directory holding the
//! resolved config, a manifest with input and output digests, and outputs.

use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

pub struct RunDir {
    dir: PathBuf,
    command: &'static str,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
}

impl RunDir {
    /// Creates `explicit`, or the first free `<run_root>/<command>-NNNN`.
    /// An existing directory is never reused.
    pub fn create(command: &'static str, cfg: &RunConfig, explicit: Option<&Path>) -> Result<Self> {
        let dir = match explicit {
            Some(path) => {
                if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                    fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
                }
                match fs::create_dir(path) {
                    Ok(()) => path.to_path_buf(),
                    Err(e) if e.kind() == ErrorKind::AlreadyExists => {
                        bail!("{} already exists; runs are never overwritten", path.display())
                    }
                    Err(e) => return Err(e).with_context(|| format!("creating {}", path.display())),
                }
            }
            None => {
                let root = &cfg.io.run_root;
                fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
                let mut seq = 1;
                loop {
                    let candidate = root.join(format!("{command}-{seq:04}"));
                    match fs::create_dir(&candidate) {
                        Ok(()) => break candidate,
                        Err(e) if e.kind() == ErrorKind::AlreadyExists => seq += 1,
                        Err(e) => return Err(e).with_context(|| format!("creating {}", candidate.display())),
                    }
                }
            }
        };
        let text = toml::to_string(cfg).context("serializing config")?;
        fs::write(dir.join("config.toml"), text).context("writing config snapshot")?;
        Ok(RunDir { dir, command, inputs: Vec::new(), outputs: Vec::new() })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let sha256 = sha256_file(path)?;
        self.inputs.push(FileDigest { path: path.display().to_string(), sha256 });
        Ok(())
    }

    /// Records an output and returns its digest.
    pub fn output(&mut self, path: &Path) -> Result<String> {
        let sha256 = sha256_file(path)?;
        self.outputs.push(FileDigest { path: path.display().to_string(), sha256: sha256.clone() });
        Ok(sha256)
    }

    pub fn finish(self) -> Result<PathBuf> {
        let manifest = Manifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            inputs: self.inputs,
            outputs: self.outputs,
        };
        let text = toml::to_string(&manifest).context("serializing manifest")?;
        fs::write(self.dir.join("manifest.toml"), text).context("writing manifest")?;
        Ok(self.dir)
    }
}

/// Fails if `path` exists; output files are never overwritten.
pub fn ensure_fresh(path: &Path) -> Result<()> {
    if path.exists() {
        bail!("{} already exists; refusing to overwrite", path.display());
    }
    Ok(())
}
