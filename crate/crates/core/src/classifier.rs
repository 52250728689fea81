//! Vision-language prompt coupling and inference.
//!
//! Training images are pseudo-labelled against the text prototypes, each
//! class gets a visual prototype averaged over K seeded crop/flip views of its
//! support images, and the two prototypes are fused with weight `alpha`.
//! Test images go to the class whose fused prototype has the highest cosine.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::discovery::{name_key, MetaCategory};
use crate::error::{Error, Result};
use crate::grounding::{generate_all_contexts, text_prototypes, GroundedClass, GroundingConfig};
use crate::prompts::PromptPack;
use crate::providers::{
    AugmentationParams, ChatProvider, ImageEmbedder, ImageRef, ProviderFingerprint, VisionLanguageEmbedder,
    DEFAULT_MIN_CROP_AREA,
};
use crate::vector::{argmax_by_key, convex_combination, cosine, mean_of_normalized, normalize, EmbeddingVector};
use crate::workers::Workers;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierMode {
    VocabularyFree,
    ZeroShot,
    FewShot,
}

impl std::str::FromStr for ClassifierMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "vocabulary_free" => Ok(Self::VocabularyFree),
            "zero_shot" => Ok(Self::ZeroShot),
            "few_shot" => Ok(Self::FewShot),
            other => Err(Error::Config(format!("unknown mode {other}"))),
        }
    }
}

/// Crop-and-flip sampling ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationPolicy {
    pub min_crop_area: f64,
    pub aspect_min: f64,
    pub aspect_max: f64,
    pub flip_probability: f64,
}

impl Default for AugmentationPolicy {
    fn default() -> Self {
        Self {
            min_crop_area: DEFAULT_MIN_CROP_AREA,
            aspect_min: 3.0 / 4.0,
            aspect_max: 4.0 / 3.0,
            flip_probability: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub alpha: f64,
    pub k_aug: usize,
    pub augmentation: AugmentationPolicy,
    pub renormalize_prototypes: bool,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            alpha: 0.7,
            k_aug: 10,
            augmentation: AugmentationPolicy::default(),
            renormalize_prototypes: false,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must be in [0, 1], got {}", self.alpha)));
        }
        if self.k_aug == 0 {
            return Err(Error::Config("k_aug must be at least 1".into()));
        }
        let a = &self.augmentation;
        if !(a.min_crop_area > 0.0 && a.min_crop_area <= 1.0) {
            return Err(Error::Config("min_crop_area must be in (0, 1]".into()));
        }
        if !(a.aspect_min > 0.0 && a.aspect_min <= 1.0 && a.aspect_max >= 1.0) {
            return Err(Error::Config("aspect range must bracket 1".into()));
        }
        if !(0.0..=1.0).contains(&a.flip_probability) {
            return Err(Error::Config("flip_probability must be in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudoLabelAssignment {
    /// Class name to its support images. Classes that won nothing are absent.
    pub groups: BTreeMap<String, Vec<ImageRef>>,
}

impl PseudoLabelAssignment {
    pub fn total(&self) -> usize {
        self.groups.values().map(Vec::len).sum()
    }
}

/// Each image goes to the class with the highest cosine; ties go to the
/// lexicographically smallest name.
pub fn pseudo_label(train: &[(ImageRef, EmbeddingVector)], classes: &[GroundedClass]) -> Result<PseudoLabelAssignment> {
    if train.is_empty() {
        return Err(Error::EmptyTrainSet);
    }
    if classes.is_empty() {
        return Err(Error::Precondition("pseudo-labelling needs at least one class".into()));
    }
    let mut groups: BTreeMap<String, Vec<ImageRef>> = BTreeMap::new();
    for (img, v) in train {
        let scored = classes
            .iter()
            .map(|c| Ok((c.class_name.as_str(), cosine(v, &c.t_c)?)))
            .collect::<Result<Vec<_>>>()?;
        let (best, _) = argmax_by_key(scored.iter().map(|(n, s)| (*n, *s))).expect("non-empty");
        groups.entry(best.to_string()).or_default().push(img.clone());
    }
    Ok(PseudoLabelAssignment { groups })
}

/// K crop/flip views for one image, drawn from a counter-based generator keyed
/// on (run seed, image content hash, view index).
pub fn augmentation_plan_for_hash(
    content_hash: &[u8; 32],
    k: usize,
    seed: u64,
    policy: &AugmentationPolicy,
) -> Vec<AugmentationParams> {
    (0..k as u64)
        .map(|index| {
            let mut h = Sha256::new();
            h.update(b"augmentation");
            h.update(seed.to_le_bytes());
            h.update(content_hash);
            h.update(index.to_le_bytes());
            let digest: [u8; 32] = h.finalize().into();
            let view_seed = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"));
            let mut rng = ChaCha8Rng::from_seed(digest);
            sample_view(&mut rng, view_seed, policy)
        })
        .collect()
}

fn sample_view(rng: &mut ChaCha8Rng, view_seed: u64, policy: &AugmentationPolicy) -> AugmentationParams {
    let mut size = None;
    for _ in 0..10 {
        let scale = rng.random_range(policy.min_crop_area..=1.0);
        let aspect = rng.random_range(policy.aspect_min..=policy.aspect_max);
        let (w, h) = ((scale * aspect).sqrt(), (scale / aspect).sqrt());
        if w <= 1.0 && h <= 1.0 {
            size = Some((w, h));
            break;
        }
    }
    let (w, h) = size.unwrap_or_else(|| {
        let side = rng.random_range(policy.min_crop_area..=1.0).sqrt();
        (side, side)
    });
    let x0 = rng.random::<f64>() * (1.0 - w);
    let y0 = rng.random::<f64>() * (1.0 - h);
    let horizontal_flip = rng.random_bool(policy.flip_probability);
    AugmentationParams {
        crop: [x0, y0, (x0 + w).min(1.0), (y0 + h).min(1.0)],
        horizontal_flip,
        seed: view_seed,
    }
}

pub fn augmentation_plan(image: &ImageRef, k: usize, seed: u64, policy: &AugmentationPolicy) -> Result<Vec<AugmentationParams>> {
    if k == 0 {
        return Err(Error::Precondition("k must be at least 1".into()));
    }
    Ok(augmentation_plan_for_hash(&image.content_hash()?, k, seed, policy))
}

/// Mean of the normalized embeddings of K augmented views of every support image.
pub fn visual_prototype(
    support: &[ImageRef],
    cfg: &ClassifierConfig,
    seed: u64,
    embedder: &dyn ImageEmbedder,
    workers: &Workers,
) -> Result<EmbeddingVector> {
    if support.is_empty() {
        return Err(Error::EmptySupportSet("(unnamed)".into()));
    }
    let mut jobs: Vec<(&ImageRef, AugmentationParams)> = Vec::with_capacity(support.len() * cfg.k_aug);
    for img in support {
        for aug in augmentation_plan(img, cfg.k_aug, seed, &cfg.augmentation)? {
            jobs.push((img, aug));
        }
    }
    let views = workers.map(&jobs, |(img, aug)| embedder.embed_image(img, Some(aug)))?;
    mean_of_normalized(&views)
}

/// `alpha * t_c + (1 - alpha) * v_c`, or `t_c` alone when the class has no visual prototype.
pub fn couple(t_c: &EmbeddingVector, v_c: Option<&EmbeddingVector>, alpha: f64) -> Result<EmbeddingVector> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Precondition(format!("alpha must be in [0, 1], got {alpha}")));
    }
    match v_c {
        Some(v) => convex_combination(t_c, v, alpha),
        None => Ok(t_c.clone()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPrototype {
    pub name: String,
    pub t_c: EmbeddingVector,
    pub v_c: Option<EmbeddingVector>,
    pub w: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoupledClassifier {
    pub mode: ClassifierMode,
    pub alpha: f64,
    pub k_aug: usize,
    /// Image side of the embedder; classification must use the same one.
    pub embedder: ProviderFingerprint,
    pub text_embedder: ProviderFingerprint,
    /// Sorted by name.
    pub classes: Vec<ClassPrototype>,
}

impl CoupledClassifier {
    pub fn validate(&self) -> Result<()> {
        let corrupt = |m: String| Err(Error::ClassifierArtifactCorrupt(m));
        if self.classes.is_empty() {
            return corrupt("no classes".into());
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return corrupt(format!("alpha {} out of range", self.alpha));
        }
        if self.k_aug == 0 {
            return corrupt("k_aug is zero".into());
        }
        let dim = self.classes[0].w.dim();
        let mut names = BTreeSet::new();
        for c in &self.classes {
            if c.name.trim().is_empty() || !names.insert(c.name.as_str()) {
                return corrupt(format!("bad or duplicate class name {:?}", c.name));
            }
            let dims_ok = c.t_c.dim() == dim && c.w.dim() == dim && c.v_c.as_ref().is_none_or(|v| v.dim() == dim);
            if !dims_ok {
                return corrupt(format!("class {} has mismatched dimensions", c.name));
            }
        }
        if let Some(d) = self.embedder.dim {
            if d != dim {
                return corrupt(format!("embedder dim {d} but vectors have {dim}"));
            }
        }
        Ok(())
    }

    pub fn class_names(&self) -> Vec<&str> {
        self.classes.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn dim(&self) -> usize {
        self.classes.first().map_or(0, |c| c.w.dim())
    }

    pub fn check_embedder(&self, fp: &ProviderFingerprint) -> Result<()> {
        if *fp != self.embedder {
            return Err(Error::FingerprintMismatch {
                artifact: self.embedder.to_string(),
                current: fp.to_string(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub image: ImageRef,
    #[serde(rename = "predicted")]
    pub predicted_name: String,
    pub similarity: f64,
    pub runner_up_margin: f64,
}

/// Highest-cosine class for an already-embedded image.
pub fn classify_embedding(image: ImageRef, v: &EmbeddingVector, clf: &CoupledClassifier) -> Result<Prediction> {
    if clf.classes.is_empty() {
        return Err(Error::Precondition("classifier has no classes".into()));
    }
    let scored = clf
        .classes
        .iter()
        .map(|c| Ok((c.name.as_str(), cosine(v, &c.w)?)))
        .collect::<Result<Vec<_>>>()?;
    let (best, sim) = argmax_by_key(scored.iter().map(|(n, s)| (*n, *s))).expect("non-empty");
    let second = scored
        .iter()
        .filter(|(n, _)| *n != best)
        .map(|(_, s)| *s)
        .fold(f64::NEG_INFINITY, f64::max);
    let runner_up_margin = if second.is_finite() { (sim - second).max(0.0) } else { 0.0 };
    Ok(Prediction {
        image,
        predicted_name: best.to_string(),
        similarity: sim,
        runner_up_margin,
    })
}

pub fn classify(image: &ImageRef, clf: &CoupledClassifier, embedder: &dyn ImageEmbedder) -> Result<Prediction> {
    clf.check_embedder(embedder.image_fingerprint())?;
    let v = embedder.embed_image(image, None)?;
    classify_embedding(image.clone(), &v, clf)
}

fn maybe_unit(v: EmbeddingVector, renormalize: bool) -> Result<EmbeddingVector> {
    if renormalize {
        Ok(normalize(&v)?.into_embedding())
    } else {
        Ok(v)
    }
}

/// Shared assembly for the image-consuming modes: visual prototypes from
/// `groups`, fused with the text prototypes.
pub fn assemble(
    mode: ClassifierMode,
    text: &[GroundedClass],
    groups: &BTreeMap<String, Vec<ImageRef>>,
    cfg: &ClassifierConfig,
    seed: u64,
    embedder: &dyn VisionLanguageEmbedder,
    workers: &Workers,
) -> Result<CoupledClassifier> {
    cfg.validate()?;
    if text.is_empty() {
        return Err(Error::Precondition("no classes to assemble".into()));
    }
    let mut classes = Vec::with_capacity(text.len());
    for g in text {
        let v_c = match groups.get(&g.class_name).filter(|u| !u.is_empty()) {
            Some(u) => Some(maybe_unit(
                visual_prototype(u, cfg, seed, embedder, workers)?,
                cfg.renormalize_prototypes,
            )?),
            None => None,
        };
        let w = maybe_unit(couple(&g.t_c, v_c.as_ref(), cfg.alpha)?, cfg.renormalize_prototypes)?;
        classes.push(ClassPrototype {
            name: g.class_name.clone(),
            t_c: g.t_c.clone(),
            v_c,
            w,
        });
    }
    classes.sort_by(|a, b| a.name.cmp(&b.name));
    let clf = CoupledClassifier {
        mode,
        alpha: cfg.alpha,
        k_aug: cfg.k_aug,
        embedder: embedder.image_fingerprint().clone(),
        text_embedder: embedder.text_fingerprint().clone(),
        classes,
    };
    clf.validate()?;
    Ok(clf)
}

/// Embeds the raw training images once (no augmentation).
pub fn embed_images(
    images: &[ImageRef],
    embedder: &dyn ImageEmbedder,
    workers: &Workers,
) -> Result<Vec<(ImageRef, EmbeddingVector)>> {
    workers.map(images, |img| Ok((img.clone(), embedder.embed_image(img, None)?)))
}

/// Pseudo-label the training images against `retained` and couple every class.
pub fn build_vocabulary_free(
    train_images: &[ImageRef],
    retained: &[GroundedClass],
    cfg: &ClassifierConfig,
    seed: u64,
    embedder: &dyn VisionLanguageEmbedder,
    workers: &Workers,
) -> Result<(CoupledClassifier, PseudoLabelAssignment)> {
    if retained.is_empty() {
        return Err(Error::Precondition("refined class set is empty".into()));
    }
    let train = embed_images(train_images, embedder, workers)?;
    let assignment = pseudo_label(&train, retained)?;
    let clf = assemble(
        ClassifierMode::VocabularyFree,
        retained,
        &assignment.groups,
        cfg,
        seed,
        embedder,
        workers,
    )?;
    Ok((clf, assignment))
}

/// Chat and prompt settings needed to turn bare names into text prototypes.
pub struct Grounder<'a> {
    pub chat: &'a dyn ChatProvider,
    pub pack: &'a PromptPack,
    pub cfg: &'a GroundingConfig,
    pub workers: &'a Workers,
}

impl Grounder<'_> {
    pub fn ground(&self, names: &[String], g: &MetaCategory, embedder: &dyn VisionLanguageEmbedder) -> Result<Vec<GroundedClass>> {
        let contexts = generate_all_contexts(names, g, self.chat, self.pack, self.cfg, self.workers)?;
        text_prototypes(names, g, contexts.as_deref(), embedder, self.cfg.renormalize_prototypes, self.workers)
    }
}

fn check_unique(names: &[String]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for n in names {
        if n.trim().is_empty() {
            return Err(Error::Precondition("empty class name".into()));
        }
        if !seen.insert(name_key(n)) {
            return Err(Error::Precondition(format!("duplicate class name {n}")));
        }
    }
    Ok(())
}

/// Text-only classifier over a known vocabulary; no images are consumed.
pub fn build_zero_shot(
    known_names: &[String],
    g: &MetaCategory,
    grounder: &Grounder<'_>,
    cfg: &ClassifierConfig,
    embedder: &dyn VisionLanguageEmbedder,
) -> Result<CoupledClassifier> {
    if known_names.is_empty() {
        return Err(Error::Precondition("zero-shot needs at least one class name".into()));
    }
    check_unique(known_names)?;
    let text = grounder.ground(known_names, g, embedder)?;
    let zero_cfg = ClassifierConfig {
        alpha: 1.0,
        ..cfg.clone()
    };
    assemble(
        ClassifierMode::ZeroShot,
        &text,
        &BTreeMap::new(),
        &zero_cfg,
        0,
        embedder,
        grounder.workers,
    )
}

/// Labelled support images replace pseudo-labels; the label set replaces the
/// refined vocabulary.
#[allow(clippy::too_many_arguments)]
pub fn build_few_shot(
    labels: &[String],
    support: &[(ImageRef, String)],
    g: &MetaCategory,
    grounder: &Grounder<'_>,
    cfg: &ClassifierConfig,
    seed: u64,
    embedder: &dyn VisionLanguageEmbedder,
) -> Result<CoupledClassifier> {
    if labels.is_empty() {
        return Err(Error::Precondition("few-shot needs at least one label".into()));
    }
    check_unique(labels)?;
    let mut groups: BTreeMap<String, Vec<ImageRef>> = labels.iter().map(|l| (l.clone(), Vec::new())).collect();
    for (img, label) in support {
        groups
            .get_mut(label)
            .ok_or_else(|| Error::Precondition(format!("support label {label} is not in the label set")))?
            .push(img.clone());
    }
    if let Some((missing, _)) = groups.iter().find(|(_, v)| v.is_empty()) {
        return Err(Error::EmptySupportSet(missing.clone()));
    }
    let text = grounder.ground(labels, g, embedder)?;
    assemble(ClassifierMode::FewShot, &text, &groups, cfg, seed, embedder, grounder.workers)
}
