use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EmbedError, Embedder, EmbeddingVector};

/// On-disk embedding cache laid out as `<root>/<provider_tag>/<sha256>.json`.
#[derive(Debug)]
pub struct EmbeddingCache {
    root: PathBuf,
    write_lock: Mutex<()>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    provider_tag: String,
    values: Vec<f64>,
}

fn sanitize(tag: &str) -> String {
    tag.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "._-".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn text_digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

impl EmbeddingCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        EmbeddingCache {
            root: root.into(),
            write_lock: Mutex::new(()),
        }
    }

    pub fn path_for(&self, tag: &str, text: &str) -> PathBuf {
        self.root
            .join(sanitize(tag))
            .join(format!("{}.json", text_digest(text)))
    }

    pub fn get(&self, tag: &str, text: &str) -> Option<EmbeddingVector> {
        let bytes = fs::read(self.path_for(tag, text)).ok()?;
        let entry: Entry = serde_json::from_slice(&bytes).ok()?;
        if entry.provider_tag != tag {
            return None;
        }
        EmbeddingVector::new(entry.values, tag).ok()
    }

    pub fn put(&self, tag: &str, text: &str, v: &EmbeddingVector) -> Result<(), EmbedError> {
        let path = self.path_for(tag, text);
        let io = |e: std::io::Error| EmbedError::Io(format!("{}: {e}", path.display()));
        let _guard = self.write_lock.lock().unwrap_or_else(|p| p.into_inner());
        fs::create_dir_all(path.parent().unwrap_or(Path::new("."))).map_err(io)?;
        let body = serde_json::to_vec(&Entry {
            provider_tag: tag.to_string(),
            values: v.values().to_vec(),
        })
        .map_err(|e| EmbedError::Io(e.to_string()))?;
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, body).map_err(io)?;
        fs::rename(&tmp, &path).map_err(io)
    }
}

/// Serves embeddings from the cache and forwards only misses, each distinct
/// text once, to the wrapped embedder.
pub struct CachedEmbedder {
    inner: Box<dyn Embedder>,
    cache: EmbeddingCache,
}

impl CachedEmbedder {
    pub fn new(inner: Box<dyn Embedder>, cache: EmbeddingCache) -> Self {
        CachedEmbedder { inner, cache }
    }
}

impl Embedder for CachedEmbedder {
    fn tag(&self) -> String {
        self.inner.tag()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        let tag = self.tag();
        let mut out: Vec<Option<EmbeddingVector>> =
            texts.iter().map(|t| self.cache.get(&tag, t)).collect();
        let mut misses: Vec<&str> = Vec::new();
        let mut seen = HashMap::new();
        for (t, slot) in texts.iter().zip(&out) {
            if slot.is_none() && !seen.contains_key(t) {
                seen.insert(*t, misses.len());
                misses.push(t);
            }
        }
        if !misses.is_empty() {
            let mut fresh = self.inner.embed(&misses)?;
            for v in &mut fresh {
                v.provider_tag = tag.clone();
            }
            for (t, v) in misses.iter().zip(&fresh) {
                self.cache.put(&tag, t, v)?;
            }
            for (t, slot) in texts.iter().zip(out.iter_mut()) {
                if slot.is_none() {
                    *slot = Some(fresh[seen[t]].clone());
                }
            }
        }
        Ok(out.into_iter().map(|v| v.expect("filled above")).collect())
    }
}
