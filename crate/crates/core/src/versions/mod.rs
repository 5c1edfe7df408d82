//! Version tree of programs with durable JSON storage.

mod diff;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codegen::Prompt;
use crate::script::{parse, ScriptSource};

pub use diff::{diff, matched_lines, matching_blocks, matching_blocks_by, similarity, Block, Change, ChangeKind, EditScript};

#[derive(Debug, Error)]
pub enum VersionError {
    #[error("UnknownParent: version {0} does not exist")]
    UnknownParent(u64),
    #[error("UnknownParent: a non-empty store needs an explicit parent")]
    MissingParent,
    #[error("UnknownVersion: version {0} does not exist")]
    UnknownVersion(u64),
    #[error("NotALeaf: version {0} has children")]
    NotALeaf(u64),
    #[error("StorageError: {0}")]
    Io(#[from] std::io::Error),
    #[error("StorageError: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Version {
    pub id: u64,
    pub parent_id: Option<u64>,
    pub program: String,
    pub prompt: Option<Prompt>,
    pub metric: Option<f64>,
    pub created_at: u64,
    /// SSA variable -> trace hash; rebuilt from the program on load.
    #[serde(skip)]
    pub trace_map: BTreeMap<String, u64>,
}

impl Version {
    pub fn source(&self) -> ScriptSource {
        ScriptSource::new(self.program.clone())
    }
}

fn trace_map(program: &str) -> BTreeMap<String, u64> {
    parse(&ScriptSource::new(program))
        .map(|g| g.trace().iter().map(|(v, h)| (v.to_string(), *h)).collect())
        .unwrap_or_default()
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct StoreFile {
    versions: Vec<Version>,
    current: Option<u64>,
}

/// One session's version tree, persisted as `versions.json` on every change.
#[derive(Debug)]
pub struct VersionStore {
    path: PathBuf,
    file: StoreFile,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

impl VersionStore {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, VersionError> {
        let path = path.into();
        let mut file: StoreFile = if path.exists() {
            serde_json::from_slice(&std::fs::read(&path)?)?
        } else {
            StoreFile::default()
        };
        for v in &mut file.versions {
            v.trace_map = trace_map(&v.program);
        }
        Ok(Self { path, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn save(&self) -> Result<(), VersionError> {
        let dir = self.path.parent().unwrap_or(Path::new("."));
        std::fs::create_dir_all(dir)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(&serde_json::to_vec_pretty(&self.file)?)?;
        tmp.as_file().sync_all()?;
        tmp.persist(&self.path).map_err(|e| VersionError::Io(e.error))?;
        Ok(())
    }

    pub fn versions(&self) -> &[Version] {
        &self.file.versions
    }

    pub fn get(&self, id: u64) -> Result<&Version, VersionError> {
        self.file.versions.iter().find(|v| v.id == id).ok_or(VersionError::UnknownVersion(id))
    }

    pub fn current(&self) -> Option<&Version> {
        self.file.current.and_then(|id| self.get(id).ok())
    }

    pub fn root(&self) -> Option<&Version> {
        self.file.versions.iter().find(|v| v.parent_id.is_none())
    }

    pub fn children(&self, id: u64) -> Vec<&Version> {
        self.file.versions.iter().filter(|v| v.parent_id == Some(id)).collect()
    }

    /// Adds a child of `parent` (the root when the store is empty), makes it
    /// current and persists before returning.
    pub fn commit(
        &mut self,
        parent: Option<u64>,
        program: &str,
        prompt: Option<Prompt>,
        metric: Option<f64>,
    ) -> Result<Version, VersionError> {
        match parent {
            Some(p) if self.get(p).is_err() => return Err(VersionError::UnknownParent(p)),
            None if !self.file.versions.is_empty() => return Err(VersionError::MissingParent),
            _ => {}
        }
        let id = self.file.versions.iter().map(|v| v.id).max().unwrap_or(0) + 1;
        let v = Version {
            id,
            parent_id: parent,
            program: program.to_string(),
            prompt,
            metric,
            created_at: now_ms(),
            trace_map: trace_map(program),
        };
        self.file.versions.push(v.clone());
        let prev = self.file.current.replace(id);
        if let Err(e) = self.save() {
            self.file.versions.pop();
            self.file.current = prev;
            return Err(e);
        }
        Ok(v)
    }

    /// Moves the current pointer; nothing is removed.
    pub fn rollback(&mut self, id: u64) -> Result<Version, VersionError> {
        let v = self.get(id)?.clone();
        let prev = self.file.current.replace(id);
        if let Err(e) = self.save() {
            self.file.current = prev;
            return Err(e);
        }
        Ok(v)
    }

    /// Removes a leaf version. If it was current, its parent becomes current.
    pub fn delete_leaf(&mut self, id: u64) -> Result<(), VersionError> {
        let v = self.get(id)?.clone();
        if !self.children(id).is_empty() {
            return Err(VersionError::NotALeaf(id));
        }
        let before = std::mem::take(&mut self.file.versions);
        self.file.versions = before.iter().filter(|x| x.id != id).cloned().collect();
        let prev = self.file.current;
        if prev == Some(id) {
            self.file.current = v.parent_id;
        }
        if let Err(e) = self.save() {
            self.file.versions = before;
            self.file.current = prev;
            return Err(e);
        }
        Ok(())
    }

    pub fn diff(&self, a: u64, b: u64) -> Result<EditScript, VersionError> {
        Ok(diff(&self.get(a)?.source(), &self.get(b)?.source()))
    }
}
