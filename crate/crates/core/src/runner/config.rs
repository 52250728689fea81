use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::{AugmentationPolicy, ClassifierConfig, ClassifierMode};
use crate::error::{Error, Result};
use crate::grounding::GroundingConfig;
use crate::providers::{
    CachedEmbedder, ChatProvider, EmbeddingCache, HttpChatClient, HttpEmbedClient, HttpVqaClient, MockChat,
    MockEmbedder, MockVqa, RetryPolicy, TextEmbedder, VisionLanguageEmbedder, VqaProvider, DEFAULT_MIN_CROP_AREA,
};
use crate::refinement::RefinementConfig;

pub const ENV_CHAT_URL: &str = "VFR_CHAT_URL";
pub const ENV_VQA_URL: &str = "VFR_VQA_URL";
pub const ENV_EMBED_URL: &str = "VFR_EMBED_URL";
pub const ENV_API_KEY: &str = "VFR_API_KEY";
pub const ENV_CACHE_DIR: &str = "VFR_CACHE_DIR";

/// Chat or VQA backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ServiceSpec {
    /// `seed` defaults to the run seed, so repeated runs resample generations.
    Mock {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    /// `url` falls back to the matching environment variable.
    Http {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        url: Option<String>,
        model: String,
    },
}

impl Default for ServiceSpec {
    fn default() -> Self {
        ServiceSpec::Mock { seed: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbedderSpec {
    Mock {
        model: String,
        dim: usize,
        #[serde(default)]
        seed: u64,
    },
    Http {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        url: Option<String>,
        model: String,
        dim: usize,
    },
}

impl EmbedderSpec {
    fn mock(model: &str) -> Self {
        EmbedderSpec::Mock {
            model: model.into(),
            dim: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProvidersConfig {
    pub chat: ServiceSpec,
    pub vqa: ServiceSpec,
    /// Inference embedder: prototypes and classification.
    pub embedder: EmbedderSpec,
    /// Scores candidate names during refinement; defaults to `embedder`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub filtration_embedder: Option<EmbedderSpec>,
    /// Text embedder behind the semantic accuracy metric.
    pub semantic_embedder: EmbedderSpec,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub retry_base_delay_ms: u64,
}

impl Default for ProvidersConfig {
    fn default() -> Self {
        Self {
            chat: ServiceSpec::default(),
            vqa: ServiceSpec::default(),
            embedder: EmbedderSpec::mock("mock-vl"),
            filtration_embedder: None,
            semantic_embedder: EmbedderSpec::mock("mock-sentence"),
            timeout_secs: 60,
            max_retries: 3,
            retry_base_delay_ms: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub mode: ClassifierMode,
    pub seed: u64,
    pub alpha: f64,
    pub k_aug: usize,
    pub m_contexts: usize,
    pub retention_ratio: f64,
    pub ccg_enabled: bool,
    pub cnr_enabled: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_override: Option<usize>,
    pub min_context_fraction: f64,
    pub context_temperature: f64,
    pub min_crop_area: f64,
    pub renormalize_prototypes: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub images_per_class_limit: Option<usize>,
    pub max_parallel_requests: usize,
    pub repeat_runs: usize,
    /// Required in zero-shot mode, where nothing is inferred from images.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub meta_category: Option<String>,
    /// Known vocabulary for zero-shot mode.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class_names: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt_pack: Option<PathBuf>,
    pub providers: ProvidersConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let g = GroundingConfig::default();
        let r = RefinementConfig::default();
        let c = ClassifierConfig::default();
        Self {
            mode: ClassifierMode::VocabularyFree,
            seed: 0,
            alpha: c.alpha,
            k_aug: c.k_aug,
            m_contexts: g.m_contexts,
            retention_ratio: r.retention_ratio,
            ccg_enabled: g.ccg_enabled,
            cnr_enabled: r.cnr_enabled,
            k_override: None,
            min_context_fraction: g.min_context_fraction,
            context_temperature: g.context_temperature,
            min_crop_area: DEFAULT_MIN_CROP_AREA,
            renormalize_prototypes: false,
            images_per_class_limit: None,
            max_parallel_requests: crate::workers::DEFAULT_MAX_PARALLEL_REQUESTS,
            repeat_runs: 1,
            meta_category: None,
            class_names: None,
            prompt_pack: None,
            providers: ProvidersConfig::default(),
            cache_dir: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn grounding(&self) -> GroundingConfig {
        GroundingConfig {
            m_contexts: self.m_contexts,
            min_context_fraction: self.min_context_fraction,
            context_temperature: self.context_temperature,
            ccg_enabled: self.ccg_enabled,
            renormalize_prototypes: self.renormalize_prototypes,
        }
    }

    pub fn refinement(&self) -> RefinementConfig {
        RefinementConfig {
            retention_ratio: self.retention_ratio,
            k_override: self.k_override,
            cnr_enabled: self.cnr_enabled,
        }
    }

    pub fn classifier(&self) -> ClassifierConfig {
        ClassifierConfig {
            alpha: self.alpha,
            k_aug: self.k_aug,
            augmentation: AugmentationPolicy {
                min_crop_area: self.min_crop_area,
                ..Default::default()
            },
            renormalize_prototypes: self.renormalize_prototypes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.refinement().validate()?;
        self.classifier().validate()?;
        if self.m_contexts == 0 {
            return Err(Error::Config("m_contexts must be at least 1".into()));
        }
        if !(self.min_context_fraction > 0.0 && self.min_context_fraction <= 1.0) {
            return Err(Error::Config("min_context_fraction must be in (0, 1]".into()));
        }
        if !(0.0..=2.0).contains(&self.context_temperature) {
            return Err(Error::Config("context_temperature must be in [0, 2]".into()));
        }
        if self.images_per_class_limit == Some(0) {
            return Err(Error::Config("images_per_class_limit must be at least 1".into()));
        }
        if self.max_parallel_requests == 0 {
            return Err(Error::Config("max_parallel_requests must be at least 1".into()));
        }
        if self.repeat_runs == 0 {
            return Err(Error::Config("repeat_runs must be at least 1".into()));
        }
        let p = &self.providers;
        for e in std::iter::once(&p.embedder)
            .chain(p.filtration_embedder.as_ref())
            .chain(std::iter::once(&p.semantic_embedder))
        {
            let dim = match e {
                EmbedderSpec::Mock { dim, .. } | EmbedderSpec::Http { dim, .. } => *dim,
            };
            if dim == 0 {
                return Err(Error::Config("embedder dim must be positive".into()));
            }
        }
        if self.mode == ClassifierMode::ZeroShot && self.meta_category.as_deref().is_none_or(|g| g.trim().is_empty())
        {
            return Err(Error::Config("zero_shot mode needs meta_category".into()));
        }
        Ok(())
    }

    /// Stable digest of everything that shapes results. The seed, output and
    /// cache locations are left out so sibling runs share one hash.
    pub fn config_hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("seed");
            obj.remove("cache_dir");
        }
        // serde_json maps are ordered by key, so this rendering is canonical
        let canonical = serde_json::to_string(&v).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

/// Live provider handles for one run.
#[derive(Clone)]
pub struct Providers {
    pub chat: Arc<dyn ChatProvider>,
    pub vqa: Arc<dyn VqaProvider>,
    pub embedder: Arc<dyn VisionLanguageEmbedder>,
    pub filtration: Arc<dyn VisionLanguageEmbedder>,
    pub semantic: Arc<dyn TextEmbedder>,
}

fn env_or(url: &Option<String>, var: &str) -> Result<String> {
    url.clone()
        .or_else(|| std::env::var(var).ok())
        .filter(|u| !u.trim().is_empty())
        .ok_or_else(|| Error::Config(format!("no endpoint configured; set {var} or give a url")))
}

impl Providers {
    /// All-mock providers; chat and VQA seeded with `seed`.
    pub fn mock(seed: u64) -> Self {
        let e: Arc<dyn VisionLanguageEmbedder> = Arc::new(MockEmbedder::new(0, "mock-vl", 64).expect("mock embedder"));
        Self {
            chat: Arc::new(MockChat::new(seed)),
            vqa: Arc::new(MockVqa::new(seed)),
            filtration: e.clone(),
            embedder: e,
            semantic: Arc::new(MockEmbedder::new(0, "mock-sentence", 64).expect("mock embedder")),
        }
    }

    pub fn from_config(cfg: &RunConfig, seed: u64) -> Result<Self> {
        let p = &cfg.providers;
        let retry = RetryPolicy {
            max_retries: p.max_retries,
            base_delay: Duration::from_millis(p.retry_base_delay_ms),
        };
        let timeout = Duration::from_secs(p.timeout_secs);
        let api_key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
        let cache = match cfg
            .cache_dir
            .clone()
            .or_else(|| std::env::var_os(ENV_CACHE_DIR).map(PathBuf::from))
        {
            Some(dir) => Some(Arc::new(EmbeddingCache::on_disk(dir)?)),
            None => None,
        };

        let chat: Arc<dyn ChatProvider> = match &p.chat {
            ServiceSpec::Mock { seed: s } => Arc::new(MockChat::new(s.unwrap_or(seed))),
            ServiceSpec::Http { url, model } => Arc::new(HttpChatClient::new(
                &env_or(url, ENV_CHAT_URL)?,
                model,
                api_key.clone(),
                retry,
                timeout,
            )?),
        };
        let vqa: Arc<dyn VqaProvider> = match &p.vqa {
            ServiceSpec::Mock { seed: s } => Arc::new(MockVqa::new(s.unwrap_or(seed))),
            ServiceSpec::Http { url, model } => Arc::new(HttpVqaClient::new(
                &env_or(url, ENV_VQA_URL)?,
                model,
                api_key.clone(),
                retry,
                timeout,
            )?),
        };
        let build = |spec: &EmbedderSpec| -> Result<Arc<dyn VisionLanguageEmbedder>> {
            let raw: Arc<dyn VisionLanguageEmbedder> = match spec {
                EmbedderSpec::Mock { model, dim, seed } => Arc::new(MockEmbedder::new(*seed, model.clone(), *dim)?),
                EmbedderSpec::Http { url, model, dim } => Arc::new(
                    HttpEmbedClient::new(&env_or(url, ENV_EMBED_URL)?, model, *dim, api_key.clone(), retry, timeout)?
                        .with_min_crop_area(cfg.min_crop_area),
                ),
            };
            Ok(match &cache {
                Some(c) => Arc::new(CachedEmbedder::new(raw, c.clone())),
                None => raw,
            })
        };
        let embedder = build(&p.embedder)?;
        let filtration = match &p.filtration_embedder {
            Some(spec) if *spec != p.embedder => build(spec)?,
            _ => embedder.clone(),
        };
        let semantic: Arc<dyn TextEmbedder> = build(&p.semantic_embedder)?;
        Ok(Self {
            chat,
            vqa,
            embedder,
            filtration,
            semantic,
        })
    }
}
