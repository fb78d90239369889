//! Append-only JSON-lines score cache.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::backend::ScoringMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub backend_id: String,
    pub mode: ScoringMode,
    pub prompt_sha256: String,
    pub variant: String,
    pub log_prob: f64,
    pub created_at: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub backend_id: String,
    pub mode: ScoringMode,
    pub prompt_sha256: String,
    pub variant: String,
}

/// SHA-256 (hex) of a prompt with the slot marker in place.
pub fn prompt_sha256(prompt_with_slot: &str) -> String {
    hex::encode(Sha256::digest(prompt_with_slot.as_bytes()))
}

/// Lookups are served from memory; appends go through one mutex-guarded
/// writer and are flushed line by line, so a killed run loses at most the
/// line being written.
#[derive(Debug)]
pub struct ScoreCache {
    path: PathBuf,
    entries: RwLock<HashMap<CacheKey, f64>>,
    writer: Mutex<File>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl ScoreCache {
    pub fn open(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)?;
            }
        }
        let mut entries = HashMap::new();
        let mut needs_newline = false;
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for (n, line) in reader.split(b'\n').enumerate() {
                let line = line?;
                if line.is_empty() {
                    continue;
                }
                match serde_json::from_slice::<CacheEntry>(&line) {
                    Ok(e) => {
                        entries.insert(
                            CacheKey {
                                backend_id: e.backend_id,
                                mode: e.mode,
                                prompt_sha256: e.prompt_sha256,
                                variant: e.variant,
                            },
                            e.log_prob,
                        );
                    }
                    Err(err) => {
                        tracing::warn!(line = n + 1, %err, "skipping unreadable cache line")
                    }
                }
            }
            let bytes = std::fs::read(&path)?;
            needs_newline = bytes.last().is_some_and(|b| *b != b'\n');
        }
        let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
        if needs_newline {
            file.write_all(b"\n")?;
        }
        Ok(ScoreCache {
            path,
            entries: RwLock::new(entries),
            writer: Mutex::new(file),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &CacheKey) -> Option<f64> {
        let found = self.entries.read().unwrap().get(key).copied();
        match found {
            Some(_) => self.hits.fetch_add(1, Ordering::Relaxed),
            None => self.misses.fetch_add(1, Ordering::Relaxed),
        };
        found
    }

    pub fn insert(&self, key: CacheKey, log_prob: f64) -> std::io::Result<()> {
        let entry = CacheEntry {
            backend_id: key.backend_id.clone(),
            mode: key.mode,
            prompt_sha256: key.prompt_sha256.clone(),
            variant: key.variant.clone(),
            log_prob,
            created_at: chrono::Utc::now().to_rfc3339(),
        };
        let mut line = serde_json::to_vec(&entry).map_err(std::io::Error::other)?;
        line.push(b'\n');
        {
            let mut w = self.writer.lock().unwrap();
            w.write_all(&line)?;
            w.flush()?;
        }
        self.entries.write().unwrap().insert(key, log_prob);
        Ok(())
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(v: &str) -> CacheKey {
        CacheKey {
            backend_id: "b".into(),
            mode: ScoringMode::Continuation,
            prompt_sha256: prompt_sha256("x [SLOT]"),
            variant: v.into(),
        }
    }

    #[test]
    fn persists_and_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c/scores.jsonl");
        {
            let c = ScoreCache::open(&path).unwrap();
            assert!(c.get(&key("they")).is_none());
            c.insert(key("they"), -1.5).unwrap();
            c.insert(key("she"), -2.5).unwrap();
        }
        let c = ScoreCache::open(&path).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.get(&key("she")), Some(-2.5));
        assert_eq!(c.hits(), 1);
    }

    #[test]
    fn torn_last_line_is_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.jsonl");
        {
            let c = ScoreCache::open(&path).unwrap();
            c.insert(key("they"), -1.0).unwrap();
        }
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"backend_id\":\"b\",\"mo").unwrap();
        drop(f);
        let c = ScoreCache::open(&path).unwrap();
        assert_eq!(c.len(), 1);
        c.insert(key("he"), -3.0).unwrap();
        drop(c);
        let c = ScoreCache::open(&path).unwrap();
        assert_eq!(c.len(), 2);
    }

    #[test]
    fn entry_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.jsonl");
        ScoreCache::open(&path)
            .unwrap()
            .insert(key("they"), -1.0)
            .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let v: serde_json::Value = serde_json::from_str(text.trim()).unwrap();
        let mut keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        keys.sort();
        assert_eq!(
            keys,
            [
                "backend_id",
                "created_at",
                "log_prob",
                "mode",
                "prompt_sha256",
                "variant"
            ]
        );
    }
}
