//! Append-only JSONL score ledger keyed by (image hash, caption, scorer id).

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{check_range, ImageRef, ScoreError, Scorer};

pub const CACHE_FILE: &str = "scores.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub image_sha256: String,
    pub caption: String,
    pub scorer_id: String,
    pub score: f64,
}

type Key = (String, String, String);

#[derive(Debug, Default)]
struct Inner {
    map: HashMap<Key, f64>,
    file: Option<File>,
}

/// In-memory map over an optional on-disk ledger. Later lines for the same key win when
/// loading; appends are serialized through the lock.
#[derive(Debug, Default)]
pub struct ScoreCache {
    path: Option<PathBuf>,
    inner: Mutex<Inner>,
}

impl ScoreCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (creating if needed) `dir/scores.jsonl`. A truncated trailing line from an
    /// interrupted write is skipped.
    pub fn open(dir: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(CACHE_FILE);
        let mut map = HashMap::new();
        let mut needs_newline = false;
        if path.exists() {
            let bytes = std::fs::read(&path)?;
            needs_newline = bytes.last().is_some_and(|&b| b != b'\n');
            for line in BufReader::new(File::open(&path)?).lines() {
                let line = line?;
                if let Ok(e) = serde_json::from_str::<CacheEntry>(&line) {
                    map.insert((e.image_sha256, e.caption, e.scorer_id), e.score);
                }
            }
        }
        let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
        if needs_newline {
            file.write_all(b"\n")?;
        }
        Ok(Self { path: Some(path), inner: Mutex::new(Inner { map, file: Some(file) }) })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, image_sha256: &str, caption: &str, scorer_id: &str) -> Option<f64> {
        let key = (image_sha256.to_string(), caption.to_string(), scorer_id.to_string());
        self.inner.lock().expect("cache lock").map.get(&key).copied()
    }

    pub fn put(&self, entry: CacheEntry) -> std::io::Result<()> {
        let mut g = self.inner.lock().expect("cache lock");
        let key = (entry.image_sha256.clone(), entry.caption.clone(), entry.scorer_id.clone());
        if g.map.get(&key) == Some(&entry.score) {
            return Ok(());
        }
        if let Some(f) = g.file.as_mut() {
            let mut line = serde_json::to_string(&entry).map_err(std::io::Error::other)?;
            line.push('\n');
            f.write_all(line.as_bytes())?;
            f.flush()?;
        }
        g.map.insert(key, entry.score);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("cache lock").map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A scorer behind the cache.
#[derive(Clone)]
pub struct CachedScorer {
    pub inner: Arc<dyn Scorer>,
    pub cache: Arc<ScoreCache>,
}

impl CachedScorer {
    pub fn new(inner: Arc<dyn Scorer>, cache: Arc<ScoreCache>) -> Self {
        Self { inner, cache }
    }

    pub fn id(&self) -> &str {
        self.inner.id()
    }

    /// Score and whether it came from the cache.
    pub fn score(&self, image: &ImageRef, caption: &str) -> Result<(f64, bool), ScoreError> {
        let id = self.inner.id();
        if let Some(s) = self.cache.get(&image.sha256, caption, id) {
            return Ok((s, true));
        }
        let s = check_range(self.inner.score(image, caption)?, self.inner.range())?;
        self.cache
            .put(CacheEntry {
                image_sha256: image.sha256.clone(),
                caption: caption.to_string(),
                scorer_id: id.to_string(),
                score: s,
            })
            .map_err(|e| ScoreError::unavailable(format!("cache write failed: {e}")))?;
        Ok((s, false))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ledger_round_trip_and_key_isolation() {
        let dir = tempfile::tempdir().unwrap();
        let e = |sha: &str, cap: &str, id: &str, s: f64| CacheEntry {
            image_sha256: sha.into(),
            caption: cap.into(),
            scorer_id: id.into(),
            score: s,
        };
        {
            let c = ScoreCache::open(dir.path()).unwrap();
            c.put(e("h", "a cat", "m1", 0.4)).unwrap();
            c.put(e("h", "a cat", "m2", 0.7)).unwrap();
        }
        std::fs::OpenOptions::new()
            .append(true)
            .open(dir.path().join(CACHE_FILE))
            .unwrap()
            .write_all(b"{\"image_sha256\":\"tr")
            .unwrap();
        let c = ScoreCache::open(dir.path()).unwrap();
        c.put(e("h2", "a cat", "m1", 0.1)).unwrap();
        drop(c);
        let c = ScoreCache::open(dir.path()).unwrap();
        assert_eq!(c.get("h2", "a cat", "m1"), Some(0.1));
        assert_eq!(c.get("h", "a cat", "m1"), Some(0.4));
        assert_eq!(c.get("h", "a cat", "m2"), Some(0.7));
        assert_eq!(c.get("h", "a dog", "m1"), None);
        assert_eq!(c.len(), 3);
    }
}
