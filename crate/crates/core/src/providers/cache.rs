//! Content-addressed embedding store.
//!
//! Keys hash the provider fingerprint together with the input content (and the
//! augmentation, for images). Entries live in memory and, when a root directory
//! is configured, on disk as `<root>/<xx>/<key>.vec`:
//!
//! ```text
//! b"VFREMB1\0" | dim: u32 le | dim x f64 le | sha256 of everything before it
//! ```
//!
//! A checksum mismatch on read is treated as a miss: the value is recomputed
//! and the file overwritten.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use sha2::{Digest, Sha256};

use super::{AugmentationParams, ImageEmbedder, ProviderFingerprint, TextEmbedder};
use crate::error::{Error, Result};
use crate::vector::EmbeddingVector;

const MAGIC: &[u8; 8] = b"VFREMB1\0";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CacheKey([u8; 32]);

impl CacheKey {
    pub fn new(fingerprint: &ProviderFingerprint, content_hash: &[u8; 32], aug: Option<&AugmentationParams>) -> Self {
        let mut h = Sha256::new();
        h.update(fingerprint.digest());
        h.update(content_hash);
        match aug {
            Some(a) => {
                h.update([1u8]);
                for c in a.crop {
                    h.update(c.to_le_bytes());
                }
                h.update([a.horizontal_flip as u8]);
            }
            None => h.update([0u8]),
        }
        Self(h.finalize().into())
    }

    pub fn hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.hex())
    }
}

#[derive(Debug, Default)]
pub struct EmbeddingCache {
    root: Option<PathBuf>,
    memory: RwLock<HashMap<CacheKey, EmbeddingVector>>,
    key_locks: Mutex<HashMap<CacheKey, Arc<Mutex<()>>>>,
    corrupt_reads: AtomicUsize,
}

impl EmbeddingCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn on_disk(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self {
            root: Some(root),
            ..Self::default()
        })
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    /// Number of entries found corrupt and recomputed so far.
    pub fn corrupt_reads(&self) -> usize {
        self.corrupt_reads.load(Ordering::SeqCst)
    }

    pub fn path_for(&self, key: &CacheKey) -> Option<PathBuf> {
        let hex = key.hex();
        self.root.as_ref().map(|r| r.join(&hex[..2]).join(format!("{hex}.vec")))
    }

    pub fn get_or_compute(
        &self,
        key: CacheKey,
        compute: impl FnOnce() -> Result<EmbeddingVector>,
    ) -> Result<EmbeddingVector> {
        if let Some(v) = self.memory.read().get(&key) {
            return Ok(v.clone());
        }
        let lock = self.key_locks.lock().entry(key).or_default().clone();
        let _guard = lock.lock();
        if let Some(v) = self.memory.read().get(&key) {
            return Ok(v.clone());
        }
        if let Some(v) = self.read_disk(&key)? {
            self.memory.write().insert(key, v.clone());
            return Ok(v);
        }
        let v = compute()?;
        self.write_disk(&key, &v)?;
        self.memory.write().insert(key, v.clone());
        Ok(v)
    }

    /// Persist a freshly computed value. Values are deterministic per key, so
    /// concurrent writers of one key are harmless; they are still serialized.
    pub fn insert(&self, key: CacheKey, v: &EmbeddingVector) -> Result<()> {
        let lock = self.key_locks.lock().entry(key).or_default().clone();
        let _guard = lock.lock();
        self.write_disk(&key, v)?;
        self.memory.write().insert(key, v.clone());
        Ok(())
    }

    /// Memory, then disk, without computing.
    pub fn lookup(&self, key: &CacheKey) -> Result<Option<EmbeddingVector>> {
        if let Some(v) = self.memory.read().get(key) {
            return Ok(Some(v.clone()));
        }
        let found = self.read_disk(key)?;
        if let Some(v) = &found {
            self.memory.write().insert(*key, v.clone());
        }
        Ok(found)
    }

    fn read_disk(&self, key: &CacheKey) -> Result<Option<EmbeddingVector>> {
        let Some(path) = self.path_for(key) else {
            return Ok(None);
        };
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(&path, e)),
        };
        match decode(&bytes) {
            Some(v) => Ok(Some(v)),
            None => {
                tracing::warn!(key = %key, "cache entry failed checksum, recomputing");
                self.corrupt_reads.fetch_add(1, Ordering::SeqCst);
                Ok(None)
            }
        }
    }

    fn write_disk(&self, key: &CacheKey, v: &EmbeddingVector) -> Result<()> {
        let Some(path) = self.path_for(key) else {
            return Ok(());
        };
        let dir = path.parent().expect("entry has a parent directory");
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
        tmp.write_all(&encode(v)).map_err(|e| Error::io(&path, e))?;
        tmp.persist(&path).map_err(|e| Error::io(&path, e.error))?;
        Ok(())
    }
}

fn encode(v: &EmbeddingVector) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 + 8 * v.dim() + 32);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(v.dim() as u32).to_le_bytes());
    for x in v.values() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    let sum = Sha256::digest(&out);
    out.extend_from_slice(&sum);
    out
}

fn decode(bytes: &[u8]) -> Option<EmbeddingVector> {
    if bytes.len() < 8 + 4 + 32 || &bytes[..8] != MAGIC {
        return None;
    }
    let (body, sum) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != sum {
        return None;
    }
    let dim = u32::from_le_bytes(body[8..12].try_into().ok()?) as usize;
    let payload = &body[12..];
    if payload.len() != dim * 8 {
        return None;
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    EmbeddingVector::new(values).ok()
}

/// Embedder decorator that routes every embedding through an [`EmbeddingCache`].
pub struct CachedEmbedder<E> {
    inner: E,
    cache: Arc<EmbeddingCache>,
}

impl<E> CachedEmbedder<E> {
    pub fn new(inner: E, cache: Arc<EmbeddingCache>) -> Self {
        Self { inner, cache }
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    pub fn cache(&self) -> &EmbeddingCache {
        &self.cache
    }
}

impl<E: TextEmbedder> TextEmbedder for CachedEmbedder<E> {
    fn text_fingerprint(&self) -> &ProviderFingerprint {
        self.inner.text_fingerprint()
    }

    fn embed_texts(&self, inputs: &[String]) -> Result<Vec<EmbeddingVector>> {
        let fp = self.inner.text_fingerprint();
        let keys: Vec<CacheKey> = inputs
            .iter()
            .map(|s| CacheKey::new(fp, &super::content_hash(s.as_bytes()), None))
            .collect();
        let mut out = Vec::with_capacity(inputs.len());
        for key in &keys {
            out.push(self.cache.lookup(key)?);
        }
        // one provider call for every distinct miss
        let mut missing: Vec<&String> = Vec::new();
        for (i, v) in out.iter().enumerate() {
            if v.is_none() && !missing.contains(&&inputs[i]) {
                missing.push(&inputs[i]);
            }
        }
        if !missing.is_empty() {
            let batch: Vec<String> = missing.iter().map(|s| s.to_string()).collect();
            let fresh = self.inner.embed_texts(&batch)?;
            if fresh.len() != batch.len() {
                return Err(Error::MalformedResponse(format!(
                    "expected {} embeddings, got {}",
                    batch.len(),
                    fresh.len()
                )));
            }
            for (i, slot) in out.iter_mut().enumerate() {
                if slot.is_none() {
                    let pos = batch.iter().position(|s| *s == inputs[i]).expect("batched");
                    let v = fresh[pos].clone();
                    self.cache.insert(keys[i], &v)?;
                    *slot = Some(v);
                }
            }
        }
        Ok(out.into_iter().map(|v| v.expect("filled")).collect())
    }
}

impl<E: ImageEmbedder> ImageEmbedder for CachedEmbedder<E> {
    fn image_fingerprint(&self) -> &ProviderFingerprint {
        self.inner.image_fingerprint()
    }

    fn embed_image_bytes(&self, bytes: &[u8], aug: Option<&AugmentationParams>) -> Result<EmbeddingVector> {
        let key = CacheKey::new(self.inner.image_fingerprint(), &super::content_hash(bytes), aug);
        self.cache
            .get_or_compute(key, || self.inner.embed_image_bytes(bytes, aug))
    }

    fn min_crop_area(&self) -> f64 {
        self.inner.min_crop_area()
    }
}
