//! Per-invocation output directories and their `run.json` records.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const RUN_FILE: &str = "run.json";

/// Resolves `--out`; relative paths land under the output root. Without
/// `--out` the directory is `<root>/<command>`.
pub fn resolve(root: Option<&Path>, out: Option<&Path>, command: &str) -> PathBuf {
    let root = root.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("runs"));
    match out {
        Some(p) if p.is_absolute() => p.to_path_buf(),
        Some(p) => root.join(p),
        None => root.join(command),
    }
}

/// SHA-256 over the listed files (or every file below a directory, in
/// sorted order), each prefixed by its path relative to the input.
pub fn content_hash(inputs: &[&Path]) -> Result<String> {
    let mut h = Sha256::new();
    for input in inputs {
        let mut files = Vec::new();
        collect_files(input, &mut files)?;
        files.sort();
        for f in files {
            let rel = f.strip_prefix(input).unwrap_or(&f);
            h.update(rel.to_string_lossy().as_bytes());
            h.update(fs::read(&f).with_context(|| format!("reading {}", f.display()))?);
        }
    }
    Ok(hex::encode(h.finalize()))
}

fn collect_files(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_dir() {
        for entry in fs::read_dir(path).with_context(|| format!("listing {}", path.display()))? {
            collect_files(&entry?.path(), out)?;
        }
    } else {
        out.push(path.to_path_buf());
    }
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct RunRecord<'a> {
    pub command: &'a str,
    pub argv: Vec<String>,
    pub version: &'a str,
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub input_hash: String,
    pub outputs: Vec<String>,
}

pub fn write_record(dir: &Path, record: &RunRecord<'_>) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(RUN_FILE);
    fs::write(&path, serde_json::to_string_pretty(record)?).with_context(|| format!("writing {}", path.display()))
}
