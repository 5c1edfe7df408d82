use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CacheError;
use crate::dataset::{ColumnKind, Dataset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedColumn {
    pub name: String,
    pub kind: ColumnKind,
}

/// Contents of `<hash>.meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub trace_hash: String,
    pub rows: usize,
    pub columns: Vec<CachedColumn>,
    pub storage_bytes: u64,
    pub compute_micros: u64,
    pub created_version: u64,
    pub hits: u64,
    pub score: f64,
}

impl CacheEntry {
    pub fn hash(&self) -> u64 {
        u64::from_str_radix(&self.trace_hash, 16).unwrap_or(0)
    }

    fn density(&self) -> f64 {
        self.score / self.storage_bytes.max(1) as f64
    }
}

pub fn hash_hex(h: u64) -> String {
    format!("{h:016x}")
}

/// On-disk materialized datasets keyed by trace hash.
#[derive(Debug)]
pub struct CacheStore {
    dir: PathBuf,
    budget_bytes: u64,
    entries: BTreeMap<u64, CacheEntry>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CacheError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| CacheError::Io(e.error))?;
    Ok(())
}

impl CacheStore {
    /// Opens (creating if needed) a cache directory and indexes its entries.
    pub fn open(dir: impl Into<PathBuf>, budget_bytes: u64) -> Result<Self, CacheError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let mut entries = BTreeMap::new();
        for item in fs::read_dir(&dir)? {
            let path = item?.path();
            let is_meta = path.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(".meta.json"));
            if !is_meta {
                continue;
            }
            let entry: CacheEntry = serde_json::from_slice(&fs::read(&path)?)?;
            if dir.join(format!("{}.csv", entry.trace_hash)).exists() {
                entries.insert(entry.hash(), entry);
            }
        }
        Ok(Self {
            dir,
            budget_bytes,
            entries,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn budget_bytes(&self) -> u64 {
        self.budget_bytes
    }

    pub fn total_bytes(&self) -> u64 {
        self.entries.values().map(|e| e.storage_bytes).sum()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, hash: u64) -> Option<&CacheEntry> {
        self.entries.get(&hash)
    }

    pub fn entries(&self) -> impl Iterator<Item = &CacheEntry> {
        self.entries.values()
    }

    fn csv_path(&self, hash: u64) -> PathBuf {
        self.dir.join(format!("{}.csv", hash_hex(hash)))
    }

    fn meta_path(&self, hash: u64) -> PathBuf {
        self.dir.join(format!("{}.meta.json", hash_hex(hash)))
    }

    pub fn load(&self, hash: u64) -> Result<Dataset, CacheError> {
        let entry = self.entries.get(&hash).ok_or(CacheError::Missing(hash))?;
        let kinds: Vec<ColumnKind> = entry.columns.iter().map(|c| c.kind).collect();
        let file = fs::File::open(self.csv_path(hash))?;
        let d = Dataset::read_csv_with_kinds(&entry.trace_hash, std::io::BufReader::new(file), Some(&kinds))?;
        if d.row_count() != entry.rows {
            return Err(CacheError::Corrupt(hash));
        }
        Ok(d)
    }

    pub fn record_hit(&mut self, hash: u64) -> Result<(), CacheError> {
        let Some(entry) = self.entries.get_mut(&hash) else {
            return Ok(());
        };
        entry.hits += 1;
        let bytes = serde_json::to_vec_pretty(entry)?;
        write_atomic(&self.meta_path(hash), &bytes)
    }

    /// Entries to evict so that `bytes` more fit the budget, taking the lowest
    /// score-per-byte first and never anything denser than the candidate.
    /// `None` when the candidate cannot fit.
    pub fn eviction_for(&self, bytes: u64, score: f64) -> Option<Vec<u64>> {
        if bytes > self.budget_bytes {
            return None;
        }
        let density = score / bytes.max(1) as f64;
        let mut victims: Vec<&CacheEntry> = self.entries.values().filter(|e| e.density() < density).collect();
        victims.sort_by(|a, b| a.density().total_cmp(&b.density()).then(a.hash().cmp(&b.hash())));
        let mut total = self.total_bytes();
        let mut out = Vec::new();
        for v in victims {
            if total + bytes <= self.budget_bytes {
                break;
            }
            total -= v.storage_bytes;
            out.push(v.hash());
        }
        (total + bytes <= self.budget_bytes).then_some(out)
    }

    pub fn remove(&mut self, hash: u64) -> Result<(), CacheError> {
        if self.entries.remove(&hash).is_some() {
            for p in [self.csv_path(hash), self.meta_path(hash)] {
                if p.exists() {
                    fs::remove_file(p)?;
                }
            }
        }
        Ok(())
    }

    /// Writes the payload then its meta file, so a crash never leaves a meta
    /// pointing at a partial CSV.
    pub fn insert(&mut self, hash: u64, d: &Dataset, compute_micros: u64, version: u64, score: f64) -> Result<(), CacheError> {
        let mut csv = Vec::new();
        d.write_csv(&mut csv)?;
        let entry = CacheEntry {
            trace_hash: hash_hex(hash),
            rows: d.row_count(),
            columns: d
                .columns()
                .iter()
                .map(|c| CachedColumn {
                    name: c.name.clone(),
                    kind: c.kind(),
                })
                .collect(),
            storage_bytes: csv.len() as u64,
            compute_micros,
            created_version: version,
            hits: 0,
            score,
        };
        write_atomic(&self.csv_path(hash), &csv)?;
        write_atomic(&self.meta_path(hash), &serde_json::to_vec_pretty(&entry)?)?;
        self.entries.insert(hash, entry);
        Ok(())
    }
}
