use std::sync::atomic::{AtomicUsize, Ordering};

use super::{
    AugmentationParams, ChatMessage, ChatProvider, ImageEmbedder, ImageRef, ProviderFingerprint, TextEmbedder,
    VqaProvider,
};
use crate::error::Result;
use crate::vector::EmbeddingVector;

/// Wraps a provider and counts calls that reach it.
///
/// `calls` counts provider invocations; `items` counts embedded strings or
/// images (a text batch of three is one call, three items).
#[derive(Debug, Default)]
pub struct Counting<P> {
    inner: P,
    calls: AtomicUsize,
    items: AtomicUsize,
    text_items: AtomicUsize,
    augmented: AtomicUsize,
}

impl<P> Counting<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
            items: AtomicUsize::new(0),
            text_items: AtomicUsize::new(0),
            augmented: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn items(&self) -> usize {
        self.items.load(Ordering::SeqCst)
    }

    /// Strings sent to the text side of an embedder.
    pub fn text_items(&self) -> usize {
        self.text_items.load(Ordering::SeqCst)
    }

    /// Image embeddings requested with a non-identity augmentation.
    pub fn augmented_calls(&self) -> usize {
        self.augmented.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::SeqCst);
        self.items.store(0, Ordering::SeqCst);
        self.text_items.store(0, Ordering::SeqCst);
        self.augmented.store(0, Ordering::SeqCst);
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }

    fn tick(&self, items: usize) {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.items.fetch_add(items, Ordering::SeqCst);
    }
}

impl<P: ChatProvider> ChatProvider for Counting<P> {
    fn fingerprint(&self) -> &ProviderFingerprint {
        self.inner.fingerprint()
    }
    fn complete(&self, messages: &[ChatMessage], temperature: f64) -> Result<String> {
        self.tick(1);
        self.inner.complete(messages, temperature)
    }
}

impl<P: VqaProvider> VqaProvider for Counting<P> {
    fn fingerprint(&self) -> &ProviderFingerprint {
        self.inner.fingerprint()
    }
    fn answer(&self, image: &ImageRef, bytes: &[u8], question: &str) -> Result<String> {
        self.tick(1);
        self.inner.answer(image, bytes, question)
    }
}

impl<P: TextEmbedder> TextEmbedder for Counting<P> {
    fn text_fingerprint(&self) -> &ProviderFingerprint {
        self.inner.text_fingerprint()
    }
    fn embed_texts(&self, inputs: &[String]) -> Result<Vec<EmbeddingVector>> {
        self.tick(inputs.len());
        self.text_items.fetch_add(inputs.len(), Ordering::SeqCst);
        self.inner.embed_texts(inputs)
    }
}

impl<P: ImageEmbedder> ImageEmbedder for Counting<P> {
    fn image_fingerprint(&self) -> &ProviderFingerprint {
        self.inner.image_fingerprint()
    }
    fn embed_image_bytes(&self, bytes: &[u8], aug: Option<&AugmentationParams>) -> Result<EmbeddingVector> {
        self.tick(1);
        if aug.is_some() {
            self.augmented.fetch_add(1, Ordering::SeqCst);
        }
        self.inner.embed_image_bytes(bytes, aug)
    }
    fn min_crop_area(&self) -> f64 {
        self.inner.min_crop_area()
    }
}
