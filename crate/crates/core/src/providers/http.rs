//! Blocking HTTP clients for the chat-completion and embedding wire protocols.

use std::time::Duration;

use base64::Engine;
use serde::Deserialize;
use serde_json::{json, Value};

use super::{
    AugmentationParams, ChatMessage, ChatProvider, ImageEmbedder, ImageRef, ProviderFingerprint, ProviderKind,
    TextEmbedder, VqaProvider,
};
use crate::error::{Error, Result};
use crate::vector::EmbeddingVector;

/// Retries transport failures and 5xx responses with exponential backoff.
/// 4xx responses fail immediately.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: u32) -> Duration {
        self.base_delay * 2u32.saturating_pow(attempt)
    }
}

#[derive(Debug, Clone)]
struct Transport {
    http: reqwest::blocking::Client,
    api_key: Option<String>,
    retry: RetryPolicy,
}

impl Transport {
    fn new(api_key: Option<String>, retry: RetryPolicy, timeout: Duration) -> Result<Self> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(Self { http, api_key, retry })
    }

    fn post_once(&self, url: &str, body: &Value) -> Result<Value> {
        let mut req = self.http.post(url).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Error::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Error::Transport(e.to_string()))?;
        if status.is_server_error() {
            return Err(Error::Transport(format!("status {}: {}", status.as_u16(), text)));
        }
        if !status.is_success() {
            return Err(Error::Rejected {
                status: status.as_u16(),
                body: text,
            });
        }
        serde_json::from_str(&text).map_err(|e| Error::MalformedResponse(e.to_string()))
    }

    fn post(&self, url: &str, body: &Value) -> Result<Value> {
        let mut attempt = 0;
        loop {
            match self.post_once(url, body) {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() && attempt < self.retry.max_retries => {
                    let delay = self.retry.delay(attempt);
                    tracing::warn!(%url, attempt, error = %e, ?delay, "retrying request");
                    std::thread::sleep(delay);
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

fn join_url(base: &str, path: &str) -> String {
    format!("{}{}", base.trim_end_matches('/'), path)
}

fn completion_text(resp: &Value) -> Result<String> {
    resp.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| Error::MalformedResponse("missing choices[0].message.content".into()))
}

fn mime_for(bytes: &[u8]) -> &'static str {
    match bytes {
        [0x89, b'P', b'N', b'G', ..] => "image/png",
        [0xFF, 0xD8, ..] => "image/jpeg",
        [b'G', b'I', b'F', ..] => "image/gif",
        [b'R', b'I', b'F', b'F', _, _, _, _, b'W', b'E', b'B', b'P', ..] => "image/webp",
        _ => "application/octet-stream",
    }
}

fn b64(bytes: &[u8]) -> String {
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

/// Client for `POST {base}/v1/chat/completions`.
#[derive(Debug, Clone)]
pub struct HttpChatClient {
    base_url: String,
    transport: Transport,
    fp: ProviderFingerprint,
}

impl HttpChatClient {
    pub fn new(base_url: &str, model: &str, api_key: Option<String>, retry: RetryPolicy, timeout: Duration) -> Result<Self> {
        Ok(Self {
            base_url: base_url.to_string(),
            transport: Transport::new(api_key, retry, timeout)?,
            fp: ProviderFingerprint::new(ProviderKind::Chat, base_url, model, None)?,
        })
    }
}

impl ChatProvider for HttpChatClient {
    fn fingerprint(&self) -> &ProviderFingerprint {
        &self.fp
    }

    fn complete(&self, messages: &[ChatMessage], temperature: f64) -> Result<String> {
        let body = json!({
            "model": self.fp.model_id,
            "temperature": temperature,
            "messages": messages
                .iter()
                .map(|m| json!({"role": m.role.as_str(), "content": m.content}))
                .collect::<Vec<_>>(),
        });
        let resp = self.transport.post(&join_url(&self.base_url, "/v1/chat/completions"), &body)?;
        completion_text(&resp)
    }
}

/// VQA over the chat-completion protocol: the user turn carries the question
/// and the image as a base64 data URL.
#[derive(Debug, Clone)]
pub struct HttpVqaClient {
    base_url: String,
    transport: Transport,
    fp: ProviderFingerprint,
}

impl HttpVqaClient {
    pub fn new(base_url: &str, model: &str, api_key: Option<String>, retry: RetryPolicy, timeout: Duration) -> Result<Self> {
        Ok(Self {
            base_url: base_url.to_string(),
            transport: Transport::new(api_key, retry, timeout)?,
            fp: ProviderFingerprint::new(ProviderKind::Vqa, base_url, model, None)?,
        })
    }
}

impl VqaProvider for HttpVqaClient {
    fn fingerprint(&self) -> &ProviderFingerprint {
        &self.fp
    }

    fn answer(&self, _image: &ImageRef, bytes: &[u8], question: &str) -> Result<String> {
        let data_url = format!("data:{};base64,{}", mime_for(bytes), b64(bytes));
        let body = json!({
            "model": self.fp.model_id,
            "temperature": 0.0,
            "messages": [{
                "role": "user",
                "content": [
                    {"type": "text", "text": question},
                    {"type": "image_url", "image_url": {"url": data_url}},
                ],
            }],
        });
        let resp = self.transport.post(&join_url(&self.base_url, "/v1/chat/completions"), &body)?;
        completion_text(&resp)
    }
}

#[derive(Debug, Deserialize)]
struct EmbedResponse {
    dim: usize,
    embeddings: Vec<Vec<f32>>,
}

/// Client for `POST {base}/v1/embed`, serving both modalities of one model.
#[derive(Debug, Clone)]
pub struct HttpEmbedClient {
    base_url: String,
    transport: Transport,
    text_fp: ProviderFingerprint,
    image_fp: ProviderFingerprint,
    min_crop_area: f64,
}

impl HttpEmbedClient {
    pub fn new(
        base_url: &str,
        model: &str,
        dim: usize,
        api_key: Option<String>,
        retry: RetryPolicy,
        timeout: Duration,
    ) -> Result<Self> {
        let text_fp = ProviderFingerprint::new(ProviderKind::TextEmbed, base_url, model, Some(dim))?;
        Ok(Self {
            base_url: base_url.to_string(),
            transport: Transport::new(api_key, retry, timeout)?,
            image_fp: text_fp.with_kind(ProviderKind::ImageEmbed),
            text_fp,
            min_crop_area: super::DEFAULT_MIN_CROP_AREA,
        })
    }

    pub fn with_min_crop_area(mut self, area: f64) -> Self {
        self.min_crop_area = area;
        self
    }

    fn call(&self, body: Value, expected: usize) -> Result<Vec<EmbeddingVector>> {
        let resp = self.transport.post(&join_url(&self.base_url, "/v1/embed"), &body)?;
        let parsed: EmbedResponse =
            serde_json::from_value(resp).map_err(|e| Error::MalformedResponse(e.to_string()))?;
        let dim = self.text_fp.dim.unwrap_or(0);
        if parsed.dim != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: parsed.dim,
            });
        }
        if parsed.embeddings.len() != expected {
            return Err(Error::MalformedResponse(format!(
                "expected {expected} embeddings, got {}",
                parsed.embeddings.len()
            )));
        }
        parsed
            .embeddings
            .iter()
            .map(|row| {
                if row.len() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, got: row.len() });
                }
                EmbeddingVector::from_f32(row)
            })
            .collect()
    }
}

impl TextEmbedder for HttpEmbedClient {
    fn text_fingerprint(&self) -> &ProviderFingerprint {
        &self.text_fp
    }

    fn embed_texts(&self, inputs: &[String]) -> Result<Vec<EmbeddingVector>> {
        let body = json!({
            "model": self.text_fp.model_id,
            "modality": "text",
            "inputs": inputs,
        });
        self.call(body, inputs.len())
    }
}

impl ImageEmbedder for HttpEmbedClient {
    fn image_fingerprint(&self) -> &ProviderFingerprint {
        &self.image_fp
    }

    fn embed_image_bytes(&self, bytes: &[u8], aug: Option<&AugmentationParams>) -> Result<EmbeddingVector> {
        let mut body = json!({
            "model": self.image_fp.model_id,
            "modality": "image",
            "inputs": [],
            "image_b64": b64(bytes),
        });
        if let Some(a) = aug {
            body["augmentation"] = a.wire();
        }
        Ok(self.call(body, 1)?.remove(0))
    }

    fn min_crop_area(&self) -> f64 {
        self.min_crop_area
    }
}
