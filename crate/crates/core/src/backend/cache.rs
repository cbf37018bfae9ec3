//! Content-addressed response cache.
//!
//! Layout under the cache root:
//!
//! ```text
//! entries/<first two hex chars>/<sha256>.json   one CacheEntry per file
//! index.jsonl                                   append-only {key, kind, created_at}
//! ```
//!
//! Entry files are the source of truth; the index is a convenience listing.
//! Each entry stores the request material it was keyed on, and a hit whose
//! stored material differs from the lookup is reported as a collision.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendError, CandidateScore, CompletionRequest, CompletionResponse};
use crate::corpus::LabelSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub request: serde_json::Value,
    pub response: CompletionResponse,
    pub created_at: String,
}

#[derive(Serialize)]
struct CompletionKey<'a> {
    kind: &'static str,
    backend: &'a str,
    model_id: &'a str,
    prompt: &'a str,
    max_tokens: u32,
    temperature: f64,
    stop: &'a Option<Vec<String>>,
}

#[derive(Serialize)]
struct ScoreKey<'a> {
    kind: &'static str,
    backend: &'a str,
    context: &'a str,
    candidates: Vec<&'a str>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CacheStats {
    pub entries: usize,
    pub bytes: u64,
}

#[derive(Debug)]
pub struct Cache {
    root: PathBuf,
    index_lock: Mutex<()>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

fn cache_err(path: &Path, e: impl std::fmt::Display) -> BackendError {
    BackendError::Cache(format!("{}: {e}", path.display()))
}

impl Cache {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, BackendError> {
        let root = root.into();
        fs::create_dir_all(root.join("entries")).map_err(|e| cache_err(&root, e))?;
        Ok(Cache {
            root,
            index_lock: Mutex::new(()),
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::SeqCst)
    }

    /// Request material a completion is keyed on.
    pub fn completion_material(backend_id: &str, request: &CompletionRequest) -> serde_json::Value {
        serde_json::to_value(CompletionKey {
            kind: "completion",
            backend: backend_id,
            model_id: &request.model_id,
            prompt: &request.prompt,
            max_tokens: request.max_tokens,
            temperature: request.temperature,
            stop: &request.stop,
        })
        .expect("key material serializes")
    }

    fn score_material(backend_id: &str, context: &str, candidates: &LabelSet) -> serde_json::Value {
        serde_json::to_value(ScoreKey {
            kind: "scores",
            backend: backend_id,
            context,
            candidates: candidates.iter().map(|l| l.as_str()).collect(),
        })
        .expect("key material serializes")
    }

    /// SHA-256 (hex) of the canonical JSON encoding of the key material.
    pub fn key_of(material: &serde_json::Value) -> String {
        let bytes = serde_json::to_vec(material).expect("json value serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn completion_key(backend_id: &str, request: &CompletionRequest) -> String {
        Self::key_of(&Self::completion_material(backend_id, request))
    }

    fn entry_path(&self, key: &str) -> PathBuf {
        self.root
            .join("entries")
            .join(&key[..2])
            .join(format!("{key}.json"))
    }

    fn lookup(&self, material: &serde_json::Value) -> Result<Option<CacheEntry>, BackendError> {
        let key = Self::key_of(material);
        let path = self.entry_path(&key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                self.misses.fetch_add(1, Ordering::SeqCst);
                return Ok(None);
            }
            Err(e) => return Err(cache_err(&path, e)),
        };
        let entry: CacheEntry = serde_json::from_slice(&bytes).map_err(|e| cache_err(&path, e))?;
        if &entry.request != material {
            return Err(BackendError::Cache(format!(
                "key collision at {key}: stored request differs from lookup"
            )));
        }
        self.hits.fetch_add(1, Ordering::SeqCst);
        Ok(Some(entry))
    }

    fn store(
        &self,
        material: serde_json::Value,
        response: &CompletionResponse,
    ) -> Result<(), BackendError> {
        let key = Self::key_of(&material);
        let path = self.entry_path(&key);
        let dir = path.parent().expect("entry path has a parent");
        fs::create_dir_all(dir).map_err(|e| cache_err(dir, e))?;
        let kind = material
            .get("kind")
            .and_then(|k| k.as_str())
            .unwrap_or("completion")
            .to_string();
        let entry = CacheEntry {
            key: key.clone(),
            request: material,
            response: response.clone(),
            created_at: chrono::Utc::now().to_rfc3339(),
        };
        let bytes = serde_json::to_vec_pretty(&entry).map_err(|e| cache_err(&path, e))?;

        // write-temp-then-rename keeps readers from seeing partial entries
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| cache_err(dir, e))?;
        tmp.write_all(&bytes).map_err(|e| cache_err(&path, e))?;
        tmp.persist(&path).map_err(|e| cache_err(&path, e.error))?;

        let line = serde_json::json!({
            "key": key,
            "kind": kind,
            "created_at": entry.created_at,
        });
        let index = self.root.join("index.jsonl");
        let _guard = self.index_lock.lock().unwrap();
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&index)
            .map_err(|e| cache_err(&index, e))?;
        writeln!(f, "{line}").map_err(|e| cache_err(&index, e))?;
        Ok(())
    }

    pub fn get_completion(
        &self,
        backend_id: &str,
        request: &CompletionRequest,
    ) -> Result<Option<CompletionResponse>, BackendError> {
        Ok(self
            .lookup(&Self::completion_material(backend_id, request))?
            .map(|e| e.response))
    }

    pub fn put_completion(
        &self,
        backend_id: &str,
        request: &CompletionRequest,
        response: &CompletionResponse,
    ) -> Result<(), BackendError> {
        self.store(Self::completion_material(backend_id, request), response)
    }

    pub fn get_scores(
        &self,
        backend_id: &str,
        context: &str,
        candidates: &LabelSet,
    ) -> Result<Option<Vec<CandidateScore>>, BackendError> {
        let Some(entry) = self.lookup(&Self::score_material(backend_id, context, candidates))?
        else {
            return Ok(None);
        };
        let scores = serde_json::from_str(&entry.response.text)
            .map_err(|e| BackendError::Cache(format!("entry {}: {e}", entry.key)))?;
        Ok(Some(scores))
    }

    pub fn put_scores(
        &self,
        backend_id: &str,
        context: &str,
        candidates: &LabelSet,
        scores: &[CandidateScore],
    ) -> Result<(), BackendError> {
        let text = serde_json::to_string(scores).map_err(|e| BackendError::Cache(e.to_string()))?;
        let mut response = CompletionResponse::stop(text);
        response
            .provider_meta
            .insert("kind".into(), serde_json::Value::from("scores"));
        self.store(
            Self::score_material(backend_id, context, candidates),
            &response,
        )
    }

    pub fn stats(&self) -> Result<CacheStats, BackendError> {
        let mut stats = CacheStats::default();
        let entries = self.root.join("entries");
        let shards = match fs::read_dir(&entries) {
            Ok(s) => s,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(stats),
            Err(e) => return Err(cache_err(&entries, e)),
        };
        for shard in shards {
            let shard = shard.map_err(|e| cache_err(&entries, e))?;
            if !shard.path().is_dir() {
                continue;
            }
            for file in fs::read_dir(shard.path()).map_err(|e| cache_err(&shard.path(), e))? {
                let file = file.map_err(|e| cache_err(&shard.path(), e))?;
                let path = file.path();
                if path.extension().and_then(|e| e.to_str()) == Some("json") {
                    stats.entries += 1;
                    stats.bytes += file.metadata().map(|m| m.len()).unwrap_or(0);
                }
            }
        }
        Ok(stats)
    }

    /// Removes every entry and the index.
    pub fn clear(&self) -> Result<(), BackendError> {
        let _guard = self.index_lock.lock().unwrap();
        let entries = self.root.join("entries");
        if entries.exists() {
            fs::remove_dir_all(&entries).map_err(|e| cache_err(&entries, e))?;
        }
        let index = self.root.join("index.jsonl");
        if index.exists() {
            fs::remove_file(&index).map_err(|e| cache_err(&index, e))?;
        }
        fs::create_dir_all(&entries).map_err(|e| cache_err(&entries, e))?;
        Ok(())
    }
}
