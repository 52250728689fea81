//! Interfaces to the external model families (chat LLM, VQA, text and image
//! embedders), their HTTP clients, deterministic mocks and the embedding cache.

pub mod cache;
pub mod counting;
pub mod http;
pub mod mock;

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::vector::EmbeddingVector;

pub use cache::{CacheKey, CachedEmbedder, EmbeddingCache};
pub use counting::Counting;
pub use http::{HttpChatClient, HttpEmbedClient, HttpVqaClient, RetryPolicy};
pub use mock::{FnChat, MockChat, MockEmbedder, MockVqa};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Result<Self> {
        let content = content.into();
        if content.trim().is_empty() {
            return Err(Error::Precondition("chat message content is empty".into()));
        }
        Ok(Self { role, content })
    }

    pub fn user(content: impl Into<String>) -> Result<Self> {
        Self::new(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Result<Self> {
        Self::new(Role::Assistant, content)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Chat,
    Vqa,
    TextEmbed,
    ImageEmbed,
}

impl ProviderKind {
    pub fn is_embedder(&self) -> bool {
        matches!(self, ProviderKind::TextEmbed | ProviderKind::ImageEmbed)
    }
}

/// Identifies which backend produced an output. Embedders carry their width.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ProviderFingerprint {
    pub provider_kind: ProviderKind,
    pub endpoint_id: String,
    pub model_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
}

impl ProviderFingerprint {
    pub fn new(kind: ProviderKind, endpoint_id: impl Into<String>, model_id: impl Into<String>, dim: Option<usize>) -> Result<Self> {
        match (kind.is_embedder(), dim) {
            (true, Some(0)) | (true, None) => {
                return Err(Error::Config(format!("{kind:?} fingerprint needs a positive dim")))
            }
            (false, Some(_)) => return Err(Error::Config(format!("{kind:?} fingerprint cannot carry a dim"))),
            _ => {}
        }
        Ok(Self {
            provider_kind: kind,
            endpoint_id: endpoint_id.into(),
            model_id: model_id.into(),
            dim,
        })
    }

    /// Same backend, other modality. Used to pair text and image sides of one model.
    pub fn with_kind(&self, kind: ProviderKind) -> Self {
        Self {
            provider_kind: kind,
            ..self.clone()
        }
    }

    pub fn digest(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("fingerprint serializes");
        Sha256::digest(json).into()
    }
}

impl fmt::Display for ProviderFingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}:{}/{}", self.provider_kind, self.endpoint_id, self.model_id)?;
        if let Some(d) = self.dim {
            write!(f, "@{d}")?;
        }
        Ok(())
    }
}

/// Reference to an image file. Content is read lazily.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageRef(PathBuf);

impl ImageRef {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self(path.into())
    }

    pub fn path(&self) -> &Path {
        &self.0
    }

    pub fn read(&self) -> Result<Vec<u8>> {
        std::fs::read(&self.0).map_err(|e| Error::ImageUnreadable {
            path: self.0.clone(),
            reason: e.to_string(),
        })
    }

    pub fn content_hash(&self) -> Result<[u8; 32]> {
        Ok(content_hash(&self.read()?))
    }
}

impl fmt::Display for ImageRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.display())
    }
}

pub fn content_hash(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

/// Default lower bound on crop area, as a fraction of the full frame.
pub const DEFAULT_MIN_CROP_AREA: f64 = 0.6;

/// One crop-and-flip view of an image. Crop corners are fractions of the image extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationParams {
    pub crop: [f64; 4],
    pub horizontal_flip: bool,
    pub seed: u64,
}

impl AugmentationParams {
    pub fn identity() -> Self {
        Self {
            crop: [0.0, 0.0, 1.0, 1.0],
            horizontal_flip: false,
            seed: 0,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.crop == [0.0, 0.0, 1.0, 1.0] && !self.horizontal_flip
    }

    pub fn area(&self) -> f64 {
        let [x0, y0, x1, y1] = self.crop;
        (x1 - x0) * (y1 - y0)
    }

    pub fn validate(&self, min_crop_area: f64) -> Result<()> {
        let [x0, y0, x1, y1] = self.crop;
        let ok = (0.0..1.0).contains(&x0)
            && (0.0..1.0).contains(&y0)
            && x0 < x1
            && x1 <= 1.0
            && y0 < y1
            && y1 <= 1.0
            && self.area() >= min_crop_area - 1e-9;
        if ok {
            Ok(())
        } else {
            Err(Error::Precondition(format!(
                "invalid augmentation crop {:?} (min area {min_crop_area})",
                self.crop
            )))
        }
    }

    /// Wire form: `{"crop": [x0,y0,x1,y1], "hflip": bool}`.
    pub fn wire(&self) -> serde_json::Value {
        serde_json::json!({ "crop": self.crop, "hflip": self.horizontal_flip })
    }
}

pub trait ChatProvider: Send + Sync {
    fn fingerprint(&self) -> &ProviderFingerprint;

    /// Raw completion. Callers go through [`ChatProvider::chat`].
    fn complete(&self, messages: &[ChatMessage], temperature: f64) -> Result<String>;

    fn chat(&self, messages: &[ChatMessage], temperature: f64) -> Result<String> {
        match messages.last() {
            None => return Err(Error::Precondition("chat needs at least one message".into())),
            Some(m) if m.role != Role::User => {
                return Err(Error::Precondition("last chat message must come from the user".into()))
            }
            _ => {}
        }
        let text = self.complete(messages, temperature)?;
        if text.trim().is_empty() {
            return Err(Error::EmptyCompletion);
        }
        Ok(text)
    }
}

pub trait VqaProvider: Send + Sync {
    fn fingerprint(&self) -> &ProviderFingerprint;

    fn answer(&self, image: &ImageRef, bytes: &[u8], question: &str) -> Result<String>;

    fn vqa(&self, image: &ImageRef, question: &str) -> Result<String> {
        if question.trim().is_empty() {
            return Err(Error::Precondition("vqa question is empty".into()));
        }
        let bytes = image.read()?;
        self.answer(image, &bytes, question)
    }
}

pub trait TextEmbedder: Send + Sync {
    fn text_fingerprint(&self) -> &ProviderFingerprint;

    fn embed_texts(&self, inputs: &[String]) -> Result<Vec<EmbeddingVector>>;

    fn embed_text(&self, inputs: &[String]) -> Result<Vec<EmbeddingVector>> {
        if inputs.is_empty() {
            return Err(Error::Precondition("embed_text needs at least one input".into()));
        }
        if inputs.iter().any(|s| s.is_empty()) {
            return Err(Error::Precondition("embed_text input is empty".into()));
        }
        let out = self.embed_texts(inputs)?;
        if out.len() != inputs.len() {
            return Err(Error::MalformedResponse(format!(
                "expected {} embeddings, got {}",
                inputs.len(),
                out.len()
            )));
        }
        let dim = self.text_fingerprint().dim.unwrap_or(0);
        for v in &out {
            if v.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: v.dim() });
            }
        }
        Ok(out)
    }

    fn embed_one(&self, input: &str) -> Result<EmbeddingVector> {
        Ok(self.embed_text(&[input.to_string()])?.remove(0))
    }
}

pub trait ImageEmbedder: Send + Sync {
    fn image_fingerprint(&self) -> &ProviderFingerprint;

    /// `aug` is `None` for the untouched frame.
    fn embed_image_bytes(&self, bytes: &[u8], aug: Option<&AugmentationParams>) -> Result<EmbeddingVector>;

    /// Lower bound on crop area that requests are validated against.
    fn min_crop_area(&self) -> f64 {
        DEFAULT_MIN_CROP_AREA
    }

    fn embed_image(&self, image: &ImageRef, aug: Option<&AugmentationParams>) -> Result<EmbeddingVector> {
        if let Some(a) = aug {
            a.validate(self.min_crop_area())?;
        }
        let aug = aug.filter(|a| !a.is_identity());
        let bytes = image.read()?;
        let v = self.embed_image_bytes(&bytes, aug)?;
        let dim = self.image_fingerprint().dim.unwrap_or(0);
        if v.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: v.dim() });
        }
        Ok(v)
    }
}

impl<T: ChatProvider + ?Sized> ChatProvider for std::sync::Arc<T> {
    fn fingerprint(&self) -> &ProviderFingerprint {
        (**self).fingerprint()
    }
    fn complete(&self, messages: &[ChatMessage], temperature: f64) -> Result<String> {
        (**self).complete(messages, temperature)
    }
}

impl<T: VqaProvider + ?Sized> VqaProvider for std::sync::Arc<T> {
    fn fingerprint(&self) -> &ProviderFingerprint {
        (**self).fingerprint()
    }
    fn answer(&self, image: &ImageRef, bytes: &[u8], question: &str) -> Result<String> {
        (**self).answer(image, bytes, question)
    }
}

impl<T: TextEmbedder + ?Sized> TextEmbedder for std::sync::Arc<T> {
    fn text_fingerprint(&self) -> &ProviderFingerprint {
        (**self).text_fingerprint()
    }
    fn embed_texts(&self, inputs: &[String]) -> Result<Vec<EmbeddingVector>> {
        (**self).embed_texts(inputs)
    }
}

impl<T: ImageEmbedder + ?Sized> ImageEmbedder for std::sync::Arc<T> {
    fn image_fingerprint(&self) -> &ProviderFingerprint {
        (**self).image_fingerprint()
    }
    fn embed_image_bytes(&self, bytes: &[u8], aug: Option<&AugmentationParams>) -> Result<EmbeddingVector> {
        (**self).embed_image_bytes(bytes, aug)
    }
    fn min_crop_area(&self) -> f64 {
        (**self).min_crop_area()
    }
}

/// Text and image sides of one vision-language model.
pub trait VisionLanguageEmbedder: TextEmbedder + ImageEmbedder {}

impl<T: TextEmbedder + ImageEmbedder + ?Sized> VisionLanguageEmbedder for T {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fingerprint_dim_rule() {
        assert!(ProviderFingerprint::new(ProviderKind::Chat, "e", "m", None).is_ok());
        assert!(ProviderFingerprint::new(ProviderKind::Chat, "e", "m", Some(8)).is_err());
        assert!(ProviderFingerprint::new(ProviderKind::TextEmbed, "e", "m", None).is_err());
        assert!(ProviderFingerprint::new(ProviderKind::ImageEmbed, "e", "m", Some(8)).is_ok());
    }

    #[test]
    fn augmentation_invariants() {
        assert!(AugmentationParams::identity().validate(0.6).is_ok());
        let small = AugmentationParams {
            crop: [0.0, 0.0, 0.5, 0.5],
            horizontal_flip: false,
            seed: 1,
        };
        assert!(small.validate(0.6).is_err());
        let inverted = AugmentationParams {
            crop: [0.5, 0.0, 0.2, 1.0],
            horizontal_flip: true,
            seed: 1,
        };
        assert!(inverted.validate(0.0).is_err());
    }

    #[test]
    fn empty_message_rejected() {
        assert!(ChatMessage::user("  ").is_err());
    }
}
