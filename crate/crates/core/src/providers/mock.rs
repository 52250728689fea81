//! Deterministic in-process providers.
//!
//! Every mock is a pure function of its seed and the input bytes, so a full
//! pipeline run on mocks reproduces bit-for-bit across processes.
//!
//! Mock images may be *descriptor files*: UTF-8 text whose first line starts
//! with `MOCKIMG`, followed by `key: value` lines (`name`, `category`, and any
//! visual attributes such as `color` or `background`). The mock VQA answers
//! questions from those fields and the mock embedder places the image near the
//! text embedding of its field values, which makes end-to-end mock runs behave
//! like a (very small) real vision-language system. Any other bytes are
//! embedded as opaque content.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use sha2::{Digest, Sha256};

use super::{
    AugmentationParams, ChatMessage, ChatProvider, ImageEmbedder, ImageRef, ProviderFingerprint, ProviderKind, Role,
    TextEmbedder, VqaProvider,
};
use crate::error::{Error, Result};
use crate::vector::{normalize, EmbeddingVector};

pub const MOCK_ENDPOINT: &str = "mock";
pub const DESCRIPTOR_MAGIC: &str = "MOCKIMG";

fn rng_for(parts: &[&[u8]]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Parsed descriptor file, or `None` for ordinary image bytes.
pub fn parse_descriptor(bytes: &[u8]) -> Option<BTreeMap<String, String>> {
    let text = std::str::from_utf8(bytes).ok()?;
    let mut lines = text.lines();
    if !lines.next()?.trim_start().starts_with(DESCRIPTOR_MAGIC) {
        return None;
    }
    let mut fields = BTreeMap::new();
    for line in lines {
        if let Some((k, v)) = line.split_once(':') {
            let (k, v) = (k.trim().to_lowercase(), v.trim().to_lowercase());
            if !k.is_empty() && !v.is_empty() {
                fields.entry(k).or_insert(v);
            }
        }
    }
    Some(fields)
}

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "of", "with", "in", "on", "at", "and", "its", "is", "to", "near", "from", "by", "for",
];

fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
}

/// Shared-space embedder for both modalities. Text is embedded as a bag of
/// hashed word directions plus a small whole-string component.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    seed: u64,
    text_fp: ProviderFingerprint,
    image_fp: ProviderFingerprint,
}

impl MockEmbedder {
    pub fn new(seed: u64, model_id: impl Into<String>, dim: usize) -> Result<Self> {
        let model_id = model_id.into();
        let text_fp = ProviderFingerprint::new(ProviderKind::TextEmbed, MOCK_ENDPOINT, model_id, Some(dim))?;
        let image_fp = text_fp.with_kind(ProviderKind::ImageEmbed);
        Ok(Self { seed, text_fp, image_fp })
    }

    pub fn dim(&self) -> usize {
        self.text_fp.dim.unwrap_or(0)
    }

    fn direction(&self, domain: &str, content: &[u8]) -> Vec<f64> {
        let mut rng = rng_for(&[
            &self.seed.to_le_bytes(),
            self.text_fp.model_id.as_bytes(),
            domain.as_bytes(),
            content,
        ]);
        let mut v: Vec<f64> = (0..self.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
        v
    }

    fn bag_of_words(&self, text: &str) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim()];
        let mut any = false;
        for t in tokens(text) {
            any = true;
            for (a, d) in acc.iter_mut().zip(self.direction("tok", t.as_bytes())) {
                *a += d;
            }
        }
        let whole = self.direction("str", text.as_bytes());
        let weight = if any { 0.35 } else { 1.0 };
        for (a, d) in acc.iter_mut().zip(whole) {
            *a += weight * d;
        }
        acc
    }

    fn finish(v: Vec<f64>) -> Result<EmbeddingVector> {
        Ok(normalize(&EmbeddingVector::new(v)?)?.into_embedding())
    }

    pub fn embed_str(&self, text: &str) -> Result<EmbeddingVector> {
        Self::finish(self.bag_of_words(text))
    }
}

fn add_scaled(acc: &mut [f64], v: &[f64], w: f64) {
    acc.iter_mut().zip(v).for_each(|(a, x)| *a += w * x);
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

impl TextEmbedder for MockEmbedder {
    fn text_fingerprint(&self) -> &ProviderFingerprint {
        &self.text_fp
    }

    fn embed_texts(&self, inputs: &[String]) -> Result<Vec<EmbeddingVector>> {
        inputs.iter().map(|s| self.embed_str(s)).collect()
    }
}

impl ImageEmbedder for MockEmbedder {
    fn image_fingerprint(&self) -> &ProviderFingerprint {
        &self.image_fp
    }

    fn embed_image_bytes(&self, bytes: &[u8], aug: Option<&AugmentationParams>) -> Result<EmbeddingVector> {
        let mut v = match parse_descriptor(bytes) {
            Some(fields) => {
                let caption = fields.values().cloned().collect::<Vec<_>>().join(" ");
                let mut v = unit(self.bag_of_words(&caption));
                add_scaled(&mut v, &self.direction("img", bytes), 0.45);
                v
            }
            None => self.direction("img", bytes),
        };
        if let Some(a) = aug.filter(|a| !a.is_identity()) {
            let mut key = bytes.to_vec();
            for c in a.crop {
                key.extend_from_slice(&c.to_le_bytes());
            }
            key.push(a.horizontal_flip as u8);
            add_scaled(&mut v, &self.direction("aug", &key), 0.25);
        }
        Self::finish(v)
    }
}

const VQA_FALLBACK: &[&str] = &["object", "no idea", "it is hard to tell", "something in a photo"];

/// Answers from descriptor fields when the question names one, else from a seeded bank.
#[derive(Debug, Clone)]
pub struct MockVqa {
    seed: u64,
    fp: ProviderFingerprint,
}

impl MockVqa {
    pub fn new(seed: u64) -> Self {
        let fp = ProviderFingerprint::new(ProviderKind::Vqa, MOCK_ENDPOINT, format!("mock-vqa-{seed}"), None)
            .expect("vqa fingerprint");
        Self { seed, fp }
    }
}

fn asks_for_category(q: &str) -> bool {
    q.contains("type of object") || q.contains("general noun") || q.contains("category")
}

impl VqaProvider for MockVqa {
    fn fingerprint(&self) -> &ProviderFingerprint {
        &self.fp
    }

    fn answer(&self, _image: &ImageRef, bytes: &[u8], question: &str) -> Result<String> {
        let q = question.to_lowercase();
        if let Some(fields) = parse_descriptor(bytes) {
            if asks_for_category(&q) {
                if let Some(c) = fields.get("category") {
                    return Ok(c.clone());
                }
            }
            for (k, v) in &fields {
                if k != "name" && k != "category" && q.contains(k.as_str()) {
                    return Ok(format!("{k}: {v}"));
                }
            }
        }
        let mut rng = rng_for(&[&self.seed.to_le_bytes(), bytes, question.as_bytes()]);
        Ok(VQA_FALLBACK.choose(&mut rng).expect("non-empty bank").to_string())
    }
}

/// Small world knowledge for the mock LLM: per category, names and a signature color.
const KNOWLEDGE: &[(&str, &[(&str, &str)])] = &[
    (
        "bird",
        &[
            ("Pine Warbler", "yellow"),
            ("Black Tern", "black"),
            ("Blue Jay", "blue"),
            ("Northern Cardinal", "red"),
            ("American Goldfinch", "yellow"),
            ("Gray Catbird", "gray"),
            ("Scarlet Tanager", "red"),
            ("Indigo Bunting", "blue"),
            ("Common Raven", "black"),
            ("House Wren", "brown"),
        ],
    ),
    (
        "dog",
        &[
            ("Siberian Husky", "gray"),
            ("Golden Retriever", "golden"),
            ("Beagle", "brown"),
            ("Dalmatian", "white"),
            ("Pug", "fawn"),
            ("Border Collie", "black"),
        ],
    ),
    (
        "flower",
        &[
            ("Purple Columbine", "purple"),
            ("Water Lily", "white"),
            ("Sunflower", "yellow"),
            ("Red Ginger", "red"),
            ("Blue Poppy", "blue"),
        ],
    ),
];

fn knowledge_for(category: &str) -> Option<&'static [(&'static str, &'static str)]> {
    let c = category.trim().to_lowercase();
    let singular = c.strip_suffix('s').unwrap_or(&c);
    KNOWLEDGE
        .iter()
        .find(|(k, _)| *k == c || *k == singular)
        .map(|(_, names)| *names)
}

fn signature_color(name: &str) -> Option<&'static str> {
    KNOWLEDGE
        .iter()
        .flat_map(|(_, names)| names.iter())
        .find(|(n, _)| n.eq_ignore_ascii_case(name.trim()))
        .map(|(_, c)| *c)
}

const CHAT_FALLBACK: &[&str] = &[
    "pong",
    "Hello! How can I help you today?",
    "I am a deterministic mock model.",
    "Understood.",
    "Could you clarify the question?",
];

const SENTENCE_PATTERNS: &[&str] = &[
    "{n} photographed beside a {a} {p}",
    "{n} with distinctive {c} coloring near a {a} {p}",
    "close view of {n} in {a} light",
    "{n} standing out against a {a} {p}",
    "{n} showing {c} details in {a} surroundings",
    "small {c} {n} near a {a} {p}",
    "{n} captured in a {a} outdoor scene",
    "{n} with {c} accents beside a {a} {p}",
    "{n} visible in front of a {a} {p}",
    "typical {n} seen in a {a} setting",
];
const ADJECTIVES: &[&str] = &[
    "sunny", "quiet", "misty", "rocky", "grassy", "shaded", "bright", "muddy", "snowy", "wooded", "open", "calm",
];
const PLACES: &[&str] = &["field", "wall", "path", "garden", "pond", "fence", "hill", "road"];

/// Mock LLM that recognizes the pipeline's prompt shapes:
/// sentence generation, name proposal and answer consolidation.
/// Anything else gets a seeded canned reply.
#[derive(Debug, Clone)]
pub struct MockChat {
    seed: u64,
    fp: ProviderFingerprint,
    context_re: Regex,
    category_re: Regex,
}

impl MockChat {
    pub fn new(seed: u64) -> Self {
        let fp = ProviderFingerprint::new(ProviderKind::Chat, MOCK_ENDPOINT, format!("mock-chat-{seed}"), None)
            .expect("chat fingerprint");
        Self {
            seed,
            fp,
            context_re: Regex::new(
                r"Generate (\d+) short and common sentences with noun (.+?), a type of (.+?), as a main subject",
            )
            .expect("valid regex"),
            category_re: Regex::new(r"(?im)^meta-category:\s*(.+?)\s*$").expect("valid regex"),
        }
    }

    fn sentences(&self, m: usize, name: &str, category: &str) -> String {
        let mut rng = rng_for(&[&self.seed.to_le_bytes(), b"ctx", name.as_bytes(), category.as_bytes()]);
        let color = signature_color(name).unwrap_or("natural");
        let mut out: Vec<String> = Vec::with_capacity(m);
        let mut attempts = 0;
        while out.len() < m && attempts < m * 50 + 100 {
            attempts += 1;
            let s = SENTENCE_PATTERNS.choose(&mut rng).expect("patterns")
                .replace("{n}", name)
                .replace("{c}", color)
                .replace("{a}", ADJECTIVES.choose(&mut rng).expect("adjectives"))
                .replace("{p}", PLACES.choose(&mut rng).expect("places"));
            if !out.contains(&s) {
                out.push(s);
            }
        }
        serde_json::to_string(&out).expect("strings serialize")
    }

    fn propose(&self, prompt: &str) -> String {
        let category = self
            .category_re
            .captures(prompt)
            .map(|c| c[1].to_string())
            .unwrap_or_else(|| "object".into());
        let lower = prompt.to_lowercase();
        let mut rng = rng_for(&[&self.seed.to_le_bytes(), b"names", prompt.as_bytes()]);
        let mut names: Vec<String> = match knowledge_for(&category) {
            Some(bank) => {
                let word_present = |w: &str| tokens(&lower).any(|t| t == w);
                let mut picked: Vec<String> = bank
                    .iter()
                    .filter(|(_, c)| word_present(c))
                    .map(|(n, _)| n.to_string())
                    .collect();
                let rest: Vec<&str> = bank.iter().map(|(n, _)| *n).filter(|n| !picked.iter().any(|p| p == n)).collect();
                picked.extend(rest.choose_multiple(&mut rng, 2).map(|s| s.to_string()));
                picked
            }
            None => ["common", "large", "small"].iter().map(|a| format!("{a} {category}")).collect(),
        };
        // seeded Fisher-Yates so order carries no information
        for i in (1..names.len()).rev() {
            let j = rng.random_range(0..=i);
            names.swap(i, j);
        }
        serde_json::to_string(&names).expect("strings serialize")
    }

    fn consolidate(&self, prompt: &str) -> Option<String> {
        let line = prompt.lines().find_map(|l| l.trim().strip_prefix("Candidate answers:"))?;
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for a in line.split(',').map(|s| s.trim().to_lowercase()).filter(|s| !s.is_empty()) {
            *counts.entry(a).or_default() += 1;
        }
        let top = *counts.values().max()?;
        let tied: Vec<&String> = counts.iter().filter(|(_, &c)| c == top).map(|(k, _)| k).collect();
        let mut rng = rng_for(&[&self.seed.to_le_bytes(), b"consolidate", line.as_bytes()]);
        tied.choose(&mut rng).map(|s| s.to_string())
    }
}

impl ChatProvider for MockChat {
    fn fingerprint(&self) -> &ProviderFingerprint {
        &self.fp
    }

    fn complete(&self, messages: &[ChatMessage], _temperature: f64) -> Result<String> {
        let task = messages
            .iter()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .ok_or_else(|| Error::Precondition("no user message".into()))?;
        if let Some(c) = self.context_re.captures(task) {
            let m: usize = c[1].parse().map_err(|_| Error::Precondition("bad sentence count".into()))?;
            return Ok(self.sentences(m, &c[2], &c[3]));
        }
        if task.contains("Candidate answers:") {
            if let Some(answer) = self.consolidate(task) {
                return Ok(answer);
            }
        }
        if task.to_lowercase().contains("candidate class names") {
            return Ok(self.propose(task));
        }
        let mut rng = rng_for(&[
            &self.seed.to_le_bytes(),
            b"fallback",
            messages.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\u{0}").as_bytes(),
        ]);
        Ok(CHAT_FALLBACK.choose(&mut rng).expect("non-empty bank").to_string())
    }
}

type ChatFn = dyn Fn(&[ChatMessage], f64) -> Result<String> + Send + Sync;

/// Chat provider backed by a closure. Handy for scripting replies in tests.
pub struct FnChat {
    fp: ProviderFingerprint,
    f: Box<ChatFn>,
}

impl FnChat {
    pub fn new(f: impl Fn(&[ChatMessage], f64) -> Result<String> + Send + Sync + 'static) -> Self {
        let fp = ProviderFingerprint::new(ProviderKind::Chat, "fn", "scripted", None).expect("chat fingerprint");
        Self { fp, f: Box::new(f) }
    }
}

impl ChatProvider for FnChat {
    fn fingerprint(&self) -> &ProviderFingerprint {
        &self.fp
    }

    fn complete(&self, messages: &[ChatMessage], temperature: f64) -> Result<String> {
        (self.f)(messages, temperature)
    }
}
