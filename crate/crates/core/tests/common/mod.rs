#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use vocabfree_core::providers::{Counting, MockChat, MockEmbedder, MockVqa};
use vocabfree_core::runner::{DatasetManifest, Providers, RunConfig, RunOptions};

pub const GOLDEN_SEED: u64 = 42;

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/mock3")
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/mock3_seed42")
}

pub fn manifest() -> DatasetManifest {
    DatasetManifest::load(&fixture_dir().join("manifest.jsonl")).unwrap()
}

pub fn config() -> RunConfig {
    RunConfig::load(&fixture_dir().join("config.json")).unwrap()
}

/// Pinned clock so run manifests are byte-stable.
pub fn options(dir: &Path) -> RunOptions {
    RunOptions {
        out_dir: dir.to_path_buf(),
        timestamp: Some(0),
    }
}

/// Default mock providers with every call counted.
pub struct Counted {
    pub chat: Arc<Counting<MockChat>>,
    pub vqa: Arc<Counting<MockVqa>>,
    pub embedder: Arc<Counting<MockEmbedder>>,
    pub semantic: Arc<Counting<MockEmbedder>>,
}

impl Counted {
    pub fn new(seed: u64) -> Self {
        Self {
            chat: Arc::new(Counting::new(MockChat::new(seed))),
            vqa: Arc::new(Counting::new(MockVqa::new(seed))),
            embedder: Arc::new(Counting::new(MockEmbedder::new(0, "mock-vl", 64).unwrap())),
            semantic: Arc::new(Counting::new(MockEmbedder::new(0, "mock-sentence", 64).unwrap())),
        }
    }

    pub fn providers(&self) -> Providers {
        Providers {
            chat: self.chat.clone(),
            vqa: self.vqa.clone(),
            embedder: self.embedder.clone(),
            filtration: self.embedder.clone(),
            semantic: self.semantic.clone(),
        }
    }
}

/// Every regular file in `dir`, sorted by name.
pub fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_type().unwrap().is_file())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
        .collect();
    out.sort();
    out
}
