//! Bounded, rotating on-disk cache of fetched volumes.
//!
//! Layout: `root_dir/<sha256(study|series)>.bin` plus `root_dir/index.json`
//! recording each entry's size and last-access counter. Eviction removes
//! the least recently used entries until the new item fits.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{IngestError, VolumeSource};
use crate::embeddings::atomic_write;
use crate::model::VolumeRef;

pub const MAX_PREFETCH_DEPTH: usize = 64;
const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheConfig {
    pub capacity_bytes: u64,
    pub root_dir: PathBuf,
    pub prefetch_depth: usize,
}

impl CacheConfig {
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.capacity_bytes == 0 {
            return Err(IngestError::Config("capacity_bytes must be positive".into()));
        }
        if self.prefetch_depth > MAX_PREFETCH_DEPTH {
            return Err(IngestError::Config(format!("prefetch_depth {} > {MAX_PREFETCH_DEPTH}", self.prefetch_depth)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Entry {
    study: String,
    series: String,
    size: u64,
    last_access: u64,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Index {
    counter: u64,
    entries: BTreeMap<String, Entry>,
}

impl Index {
    fn total(&self) -> u64 {
        self.entries.values().map(|e| e.size).sum()
    }

    fn touch(&mut self, key: &str) {
        self.counter += 1;
        if let Some(e) = self.entries.get_mut(key) {
            e.last_access = self.counter;
        }
    }

    fn lru(&self) -> Option<String> {
        self.entries.iter().min_by_key(|(_, e)| e.last_access).map(|(k, _)| k.clone())
    }
}

/// Cache key for a volume: hex SHA-256 of `study|series`.
pub fn cache_key(volume: &VolumeRef) -> String {
    let digest = Sha256::digest(format!("{}|{}", volume.study_uid(), volume.series_uid()).as_bytes());
    hex::encode(digest)
}

pub struct VolumeCache {
    config: CacheConfig,
    index: Mutex<Index>,
}

impl VolumeCache {
    /// Open (or create) a cache directory, dropping index entries whose
    /// files have gone missing.
    pub fn open(config: CacheConfig) -> Result<Self, IngestError> {
        config.validate()?;
        std::fs::create_dir_all(&config.root_dir)?;
        let index_path = config.root_dir.join(INDEX_FILE);
        let mut index: Index =
            if index_path.exists() { serde_json::from_slice(&std::fs::read(&index_path)?)? } else { Index::default() };
        index.entries.retain(|k, _| config.root_dir.join(format!("{k}.bin")).exists());
        Ok(Self { config, index: Mutex::new(index) })
    }

    pub fn config(&self) -> &CacheConfig {
        &self.config
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.config.root_dir.join(format!("{key}.bin"))
    }

    fn persist(&self, index: &Index) -> Result<(), IngestError> {
        atomic_write(&self.config.root_dir.join(INDEX_FILE), &serde_json::to_vec_pretty(index)?)?;
        Ok(())
    }

    /// Return a local path holding the complete volume, fetching it on a
    /// miss. The path stays valid until the entry is evicted.
    pub fn get_or_fetch<S: VolumeSource + ?Sized>(
        &self,
        source: &S,
        volume: &VolumeRef,
    ) -> Result<PathBuf, IngestError> {
        let key = cache_key(volume);
        {
            let mut index = self.index.lock().expect("cache lock");
            if index.entries.contains_key(&key) {
                index.touch(&key);
                self.persist(&index)?;
                return Ok(self.path_for(&key));
            }
        }
        let bytes = source.fetch_volume(volume)?;
        self.insert(volume, &key, &bytes)?;
        Ok(self.path_for(&key))
    }

    fn insert(&self, volume: &VolumeRef, key: &str, bytes: &[u8]) -> Result<(), IngestError> {
        let size = bytes.len() as u64;
        if size > self.config.capacity_bytes {
            return Err(IngestError::Capacity { size, capacity: self.config.capacity_bytes });
        }
        let mut index = self.index.lock().expect("cache lock");
        if index.entries.contains_key(key) {
            index.touch(key);
            return self.persist(&index);
        }
        while index.total() + size > self.config.capacity_bytes {
            let victim = index.lru().expect("non-empty while over capacity");
            index.entries.remove(&victim);
            match std::fs::remove_file(self.path_for(&victim)) {
                Err(e) if e.kind() != std::io::ErrorKind::NotFound => return Err(e.into()),
                _ => {}
            }
            log::debug!("evicted {victim}");
        }
        atomic_write(&self.path_for(key), bytes)?;
        index.counter += 1;
        let last_access = index.counter;
        index.entries.insert(
            key.to_string(),
            Entry { study: volume.study_uid().to_string(), series: volume.series_uid(), size, last_access },
        );
        self.persist(&index)
    }

    /// Keys currently resident, least recently used first.
    pub fn resident(&self) -> Vec<String> {
        let index = self.index.lock().expect("cache lock");
        let mut e: Vec<_> = index.entries.iter().map(|(k, e)| (e.last_access, k.clone())).collect();
        e.sort();
        e.into_iter().map(|(_, k)| k).collect()
    }

    pub fn total_bytes(&self) -> u64 {
        self.index.lock().expect("cache lock").total()
    }

    pub fn root(&self) -> &Path {
        &self.config.root_dir
    }
}
