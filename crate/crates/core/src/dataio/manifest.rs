//! Prompt-pair manifests: one JSON record per line.
//!
//! Relative embedding paths resolve against the manifest's directory.

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairRecord {
    pub pair_id: String,
    pub src_embedding_path: PathBuf,
    pub tgt_embedding_path: PathBuf,
    pub src_prompt: String,
    pub tgt_prompt: String,
    /// Token carrying the attribute in the target, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PairManifest {
    pub records: Vec<PairRecord>,
    /// Directory that relative paths are resolved against.
    pub base_dir: PathBuf,
}

impl PairManifest {
    pub fn new(records: Vec<PairRecord>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let m = Self {
            records,
            base_dir: base_dir.into(),
        };
        m.check_unique()?;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn check_unique(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.pair_id.as_str()) {
                return Err(Error::Data(format!("duplicate pair_id {:?}", r.pair_id)));
            }
        }
        Ok(())
    }

    /// Fails on the first record whose embedding files are missing.
    pub fn check_paths(&self) -> Result<()> {
        for r in &self.records {
            for p in [&r.src_embedding_path, &r.tgt_embedding_path] {
                let full = self.resolve(p);
                if !full.is_file() {
                    return Err(Error::Data(format!(
                        "pair {:?}: embedding file {} not found",
                        r.pair_id,
                        full.display()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).map_err(|e| Error::Data(e.to_string()))?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Parses JSON lines; blank lines are skipped. Does not touch the filesystem.
    pub fn parse(text: impl BufRead, path: &Path, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut records = Vec::new();
        let mut offset = 0u64;
        for line in text.lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let len = line.len() as u64 + 1;
            if !line.trim().is_empty() {
                let rec: PairRecord = serde_json::from_str(&line).map_err(|e| Error::Format {
                    path: path.to_path_buf(),
                    offset,
                    reason: format!("line {}: {e}", records.len() + 1),
                })?;
                records.push(rec);
            }
            offset += len;
        }
        Self::new(records, base_dir)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Self::parse(BufReader::new(f), path, base)?;
        m.check_paths()?;
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl()?.as_bytes()).map_err(|e| Error::io(path, e))
    }
}
