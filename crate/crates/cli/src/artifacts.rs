//! Content-addressed output directories.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub const MARKER: &str = "run.json";
const HASH_CHARS: usize = 16;

/// SHA-256 over a file, or over every file below a directory in name order.
pub fn fingerprint(path: &Path) -> Result<String> {
    let mut hasher = Sha256::new();
    feed(&mut hasher, path, path)?;
    Ok(hex::encode(hasher.finalize()))
}

fn feed(hasher: &mut Sha256, root: &Path, path: &Path) -> Result<()> {
    let meta = fs::metadata(path).with_context(|| format!("{} does not exist", path.display()))?;
    if meta.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)
            .with_context(|| format!("listing {}", path.display()))?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        entries.sort();
        for e in entries {
            if e.file_name().is_some_and(|n| n == MARKER) {
                continue;
            }
            feed(hasher, root, &e)?;
        }
    } else {
        let rel = path.strip_prefix(root).unwrap_or(path).to_string_lossy().into_owned();
        hasher.update(rel.as_bytes());
        hasher.update([0]);
        hasher.update(fs::read(path).with_context(|| format!("reading {}", path.display()))?);
    }
    Ok(())
}

/// Everything that determines a command's output.
#[derive(Debug, Serialize)]
pub struct RunKey {
    pub command: String,
    pub args: Value,
    pub config: Value,
    pub inputs: Vec<(String, String)>,
}

impl RunKey {
    pub fn new(command: &str, args: Value, config: Value) -> Self {
        Self { command: command.into(), args, config, inputs: Vec::new() }
    }

    pub fn input(mut self, label: &str, path: &Path) -> Result<Self> {
        self.inputs.push((label.into(), fingerprint(path)?));
        Ok(self)
    }

    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("run key serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

/// Where a command writes and whether it has to run at all.
#[derive(Debug)]
pub struct RunDir {
    pub path: PathBuf,
    pub hash: String,
    pub up_to_date: bool,
}

impl RunDir {
    pub fn resolve(root: &Path, out: Option<&Path>, key: &RunKey, force: bool) -> Result<Self> {
        let hash = key.hash();
        let path = match out {
            Some(p) => p.to_path_buf(),
            None => root.join(&key.command).join(&hash[..HASH_CHARS]),
        };
        let up_to_date = !force && marker_hash(&path).as_deref() == Some(hash.as_str());
        if !up_to_date {
            fs::create_dir_all(&path).with_context(|| format!("creating {}", path.display()))?;
        }
        Ok(Self { path, hash, up_to_date })
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    /// Records a finished run; later identical invocations become no-ops.
    pub fn finish(&self, key: &RunKey) -> Result<()> {
        let marker = json!({ "hash": self.hash, "key": key });
        let text = serde_json::to_string_pretty(&marker)?;
        fs::write(self.file(MARKER), text).with_context(|| format!("writing {}", self.file(MARKER).display()))
    }
}

fn marker_hash(dir: &Path) -> Option<String> {
    let text = fs::read_to_string(dir.join(MARKER)).ok()?;
    let v: Value = serde_json::from_str(&text).ok()?;
    v.get("hash")?.as_str().map(str::to_owned)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fingerprint_changes_with_content_and_ignores_marker() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.txt"), "one").unwrap();
        let first = fingerprint(dir.path()).unwrap();
        fs::write(dir.path().join(MARKER), "{}").unwrap();
        assert_eq!(fingerprint(dir.path()).unwrap(), first);
        fs::write(dir.path().join("a.txt"), "two").unwrap();
        assert_ne!(fingerprint(dir.path()).unwrap(), first);
    }

    #[test]
    fn finished_run_is_up_to_date_unless_forced() {
        let root = tempfile::tempdir().unwrap();
        let key = RunKey::new("demo", json!({"x": 1}), json!({}));
        let run = RunDir::resolve(root.path(), None, &key, false).unwrap();
        assert!(!run.up_to_date);
        run.finish(&key).unwrap();
        assert!(RunDir::resolve(root.path(), None, &key, false).unwrap().up_to_date);
        assert!(!RunDir::resolve(root.path(), None, &key, true).unwrap().up_to_date);
        let other = RunKey::new("demo", json!({"x": 2}), json!({}));
        assert!(!RunDir::resolve(root.path(), None, &other, false).unwrap().up_to_date);
    }
}
