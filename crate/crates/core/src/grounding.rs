//! Class-specific contextual grounding: generate M sentences per class name
//! and ensemble their text embeddings into one contextual embedding.

use serde::{Deserialize, Serialize};

use crate::discovery::{parse_name_list, MetaCategory};
use crate::error::{Error, Result};
use crate::prompts::{fill, pluralize, PromptPack};
use crate::providers::{ChatMessage, ChatProvider, TextEmbedder};
use crate::vector::{mean_of_normalized, normalize, EmbeddingVector};
use crate::workers::Workers;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroundingConfig {
    pub m_contexts: usize,
    pub min_context_fraction: f64,
    pub context_temperature: f64,
    pub ccg_enabled: bool,
    pub renormalize_prototypes: bool,
}

impl Default for GroundingConfig {
    fn default() -> Self {
        Self {
            m_contexts: 100,
            min_context_fraction: 0.5,
            context_temperature: 0.7,
            ccg_enabled: true,
            renormalize_prototypes: false,
        }
    }
}

/// Validated sentences for one class. Serialized as one JSONL record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextSet {
    #[serde(rename = "class")]
    pub class_name: String,
    pub sentences: Vec<String>,
    pub m_requested: usize,
}

impl ContextSet {
    /// Keeps sentences that mention the class (case-insensitive), drops exact
    /// duplicates and caps the list at `m_requested`.
    pub fn from_raw(class_name: &str, raw: impl IntoIterator<Item = String>, m_requested: usize) -> Self {
        let needle = class_name.to_lowercase();
        let mut sentences: Vec<String> = Vec::new();
        for s in raw {
            let s = s.trim().to_string();
            if sentences.len() >= m_requested {
                break;
            }
            if !s.is_empty() && s.to_lowercase().contains(&needle) && !sentences.contains(&s) {
                sentences.push(s);
            }
        }
        Self {
            class_name: class_name.to_string(),
            sentences,
            m_requested,
        }
    }

    fn merge(mut self, more: ContextSet) -> Self {
        for s in more.sentences {
            if self.sentences.len() >= self.m_requested {
                break;
            }
            if !self.sentences.contains(&s) {
                self.sentences.push(s);
            }
        }
        self
    }

    pub fn validate(&self, min_fraction: f64) -> Result<()> {
        let needle = self.class_name.to_lowercase();
        if self.sentences.iter().any(|s| !s.to_lowercase().contains(&needle)) {
            return Err(Error::Precondition(format!("context for {} has a sentence without the name", self.class_name)));
        }
        let mut uniq = self.sentences.clone();
        uniq.sort();
        uniq.dedup();
        if uniq.len() != self.sentences.len() {
            return Err(Error::Precondition(format!("context for {} has duplicates", self.class_name)));
        }
        let needed = min_required(self.m_requested, min_fraction);
        if self.sentences.len() < needed || self.sentences.is_empty() {
            return Err(Error::InsufficientContexts {
                class: self.class_name.clone(),
                got: self.sentences.len(),
                needed,
            });
        }
        Ok(())
    }
}

pub fn min_required(m: usize, fraction: f64) -> usize {
    (fraction * m as f64).ceil() as usize
}

/// A class name with its text prototype. `context` is `None` on the plain-prompt path.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundedClass {
    pub class_name: String,
    pub context: Option<ContextSet>,
    pub t_c: EmbeddingVector,
}

pub fn build_context_prompt(pack: &PromptPack, class_name: &str, g: &MetaCategory, m: usize) -> String {
    let m = m.to_string();
    let plural = pluralize(&g.name);
    fill(
        &pack.context_template,
        &[
            ("m", m.as_str()),
            ("classname", class_name),
            ("g", g.name.as_str()),
            ("g_plural", plural.as_str()),
        ],
    )
}

pub fn generate_contexts(
    class_name: &str,
    g: &MetaCategory,
    chat: &dyn ChatProvider,
    pack: &PromptPack,
    cfg: &GroundingConfig,
) -> Result<ContextSet> {
    if class_name.trim().is_empty() {
        return Err(Error::Precondition("class name is empty".into()));
    }
    let m = cfg.m_contexts;
    if m == 0 {
        return Err(Error::Precondition("m_contexts must be at least 1".into()));
    }
    let needed = min_required(m, cfg.min_context_fraction).max(1);
    let prompt = build_context_prompt(pack, class_name, g, m);
    let attempt = || -> Result<ContextSet> {
        let raw = chat.chat(&[ChatMessage::user(prompt.as_str())?], cfg.context_temperature)?;
        let items = match parse_name_list(&raw) {
            Ok(items) => items,
            Err(Error::UnparseableNameList) => Vec::new(),
            Err(e) => return Err(e),
        };
        Ok(ContextSet::from_raw(class_name, items, m))
    };
    let mut set = attempt()?;
    if set.sentences.len() < needed {
        tracing::warn!(class = class_name, got = set.sentences.len(), needed, "too few contexts, retrying once");
        set = set.merge(attempt()?);
    }
    if set.sentences.len() < needed {
        return Err(Error::InsufficientContexts {
            class: class_name.to_string(),
            got: set.sentences.len(),
            needed,
        });
    }
    Ok(set)
}

fn maybe_renormalize(v: EmbeddingVector, renormalize: bool) -> Result<EmbeddingVector> {
    if renormalize {
        Ok(normalize(&v)?.into_embedding())
    } else {
        Ok(v)
    }
}

/// Mean of the normalized sentence embeddings. The averaging count is the
/// number of retained sentences.
pub fn contextual_text_embedding(
    context: &ContextSet,
    embedder: &dyn TextEmbedder,
    renormalize: bool,
) -> Result<GroundedClass> {
    if context.sentences.is_empty() {
        return Err(Error::EmptyInput);
    }
    let vs = embedder.embed_text(&context.sentences)?;
    let t_c = maybe_renormalize(mean_of_normalized(&vs)?, renormalize)?;
    Ok(GroundedClass {
        class_name: context.class_name.clone(),
        context: Some(context.clone()),
        t_c,
    })
}

pub fn plain_prompt(class_name: &str, g: &MetaCategory) -> String {
    format!("a photo of a {class_name}, a type of {}.", g.name)
}

/// Single-template text prototype used when contextual grounding is disabled.
pub fn build_plain_prompt_embedding(
    class_name: &str,
    g: &MetaCategory,
    embedder: &dyn TextEmbedder,
) -> Result<EmbeddingVector> {
    if class_name.trim().is_empty() {
        return Err(Error::Precondition("class name is empty".into()));
    }
    let v = embedder.embed_one(&plain_prompt(class_name, g))?;
    Ok(normalize(&v)?.into_embedding())
}

/// Generate contexts for every name. Returns `None` when grounding is disabled.
pub fn generate_all_contexts(
    names: &[String],
    g: &MetaCategory,
    chat: &dyn ChatProvider,
    pack: &PromptPack,
    cfg: &GroundingConfig,
    workers: &Workers,
) -> Result<Option<Vec<ContextSet>>> {
    if !cfg.ccg_enabled {
        return Ok(None);
    }
    workers.map(names, |n| generate_contexts(n, g, chat, pack, cfg)).map(Some)
}

/// Text prototypes for `names` under one embedder: contextual when `contexts`
/// is given (matched by class name), plain prompt otherwise.
pub fn text_prototypes(
    names: &[String],
    g: &MetaCategory,
    contexts: Option<&[ContextSet]>,
    embedder: &dyn TextEmbedder,
    renormalize: bool,
    workers: &Workers,
) -> Result<Vec<GroundedClass>> {
    workers.map(names, |name| match contexts {
        Some(all) => {
            let ctx = all
                .iter()
                .find(|c| c.class_name == *name)
                .ok_or_else(|| Error::Precondition(format!("no contexts for class {name}")))?;
            contextual_text_embedding(ctx, embedder, renormalize)
        }
        None => Ok(GroundedClass {
            class_name: name.clone(),
            context: None,
            t_c: build_plain_prompt_embedding(name, g, embedder)?,
        }),
    })
}
