use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::providers::ImageRef;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Relative paths resolve against the manifest's directory.
    pub image_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_label: Option<String>,
    pub split: Split,
}

/// JSONL dataset listing: one entry per line.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    entries: Vec<ManifestEntry>,
    base_dir: PathBuf,
}

fn path_key(p: &str) -> PathBuf {
    Path::new(p)
        .components()
        .filter(|c| !matches!(c, std::path::Component::CurDir))
        .collect()
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry = serde_json::from_str(line)
                .map_err(|e| Error::Manifest(format!("{} line {}: {e}", path.display(), i + 1)))?;
            entries.push(entry);
        }
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(entries, base_dir)
    }

    pub fn new(entries: Vec<ManifestEntry>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut splits: BTreeMap<PathBuf, Split> = BTreeMap::new();
        for e in &entries {
            if e.image_path.trim().is_empty() {
                return Err(Error::Manifest("entry with empty image_path".into()));
            }
            if e.gt_label.as_deref().is_some_and(|l| l.trim().is_empty()) {
                return Err(Error::Manifest(format!("{}: empty gt_label", e.image_path)));
            }
            if let Some(prev) = splits.insert(path_key(&e.image_path), e.split) {
                let msg = if prev != e.split {
                    format!("{} appears in both train and test", e.image_path)
                } else {
                    format!("duplicate path {}", e.image_path)
                };
                return Err(Error::Manifest(msg));
            }
        }
        Ok(Self {
            entries,
            base_dir: base_dir.into(),
        })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> ImageRef {
        ImageRef::new(self.base_dir.join(&entry.image_path))
    }

    pub fn split(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }

    pub fn label_of(&self, image_path: &str) -> Option<&str> {
        let key = path_key(image_path);
        self.entries
            .iter()
            .find(|e| path_key(&e.image_path) == key)
            .and_then(|e| e.gt_label.as_deref())
    }

    /// Training entries, capped at `limit` per ground-truth label when given.
    /// The subset is drawn from a generator keyed on (seed, label) and keeps
    /// manifest order. Unlabelled entries are never dropped.
    pub fn sample_train(&self, limit: Option<usize>, seed: u64) -> Vec<&ManifestEntry> {
        let train = self.split(Split::Train);
        let Some(limit) = limit else { return train };
        let mut by_label: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, e) in train.iter().enumerate() {
            if let Some(l) = e.gt_label.as_deref() {
                by_label.entry(l).or_default().push(i);
            }
        }
        let mut dropped = HashSet::new();
        for (label, idx) in by_label {
            if idx.len() <= limit {
                continue;
            }
            let mut h = Sha256::new();
            h.update(b"train-sample");
            h.update(seed.to_le_bytes());
            h.update(label.as_bytes());
            let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
            let keep: HashSet<usize> = sample(&mut rng, idx.len(), limit).into_iter().map(|k| idx[k]).collect();
            dropped.extend(idx.into_iter().filter(|i| !keep.contains(i)));
        }
        train
            .into_iter()
            .enumerate()
            .filter(|(i, _)| !dropped.contains(i))
            .map(|(_, e)| e)
            .collect()
    }
}
