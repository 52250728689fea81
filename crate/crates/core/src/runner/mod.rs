//! Configuration, dataset manifests, artifact persistence, and end-to-end
//! orchestration of the three classifier modes.

pub mod artifacts;
pub mod config;
pub mod manifest;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use tracing::{info, warn};

use crate::classifier::{
    build_few_shot, build_vocabulary_free, build_zero_shot, classify_embedding, ClassifierMode, CoupledClassifier,
    Grounder, PseudoLabelAssignment,
};
use crate::discovery::{discover, infer_meta_category, name_key, Discovery, MetaCategory};
use crate::error::{Error, Result, Stage, StageExt};
use crate::evaluation::{evaluate, filtration_sensitivity, write_per_image_csv, MetricsReport, PerImageRow};
use crate::grounding::{generate_all_contexts, text_prototypes, ContextSet, GroundedClass};
use crate::prompts::PromptPack;
use crate::providers::{ImageRef, VisionLanguageEmbedder};
use crate::refinement::{filter_top_k, score_candidates, RefinementRecord, ScoredCandidate};
use crate::workers::Workers;

use artifacts::*;
pub use config::{EmbedderSpec, Providers, ProvidersConfig, RunConfig, ServiceSpec};
pub use manifest::{DatasetManifest, ManifestEntry, Split};

/// Where artifacts go and which clock stamps them.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Fixed unix time for run-manifest timestamps; `None` reads the clock.
    pub timestamp: Option<u64>,
}

impl RunOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            timestamp: None,
        }
    }

    fn now(&self) -> u64 {
        self.timestamp.unwrap_or_else(|| {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        })
    }
}

/// One seeded pass over a configuration.
pub struct Session<'a> {
    pub cfg: &'a RunConfig,
    pub seed: u64,
    pub providers: &'a Providers,
    pub pack: PromptPack,
    pub workers: Workers,
    pub config_hash: String,
}

impl<'a> Session<'a> {
    pub fn new(cfg: &'a RunConfig, seed: u64, providers: &'a Providers) -> Result<Self> {
        cfg.validate().stage(Stage::Config)?;
        let pack = match &cfg.prompt_pack {
            Some(p) => PromptPack::from_path(p).stage(Stage::Config)?,
            None => PromptPack::default(),
        };
        Ok(Self {
            cfg,
            seed,
            providers,
            pack,
            workers: Workers::new(cfg.max_parallel_requests).stage(Stage::Config)?,
            config_hash: cfg.config_hash(),
        })
    }

    fn grounder(&self) -> GroundingBundle<'_> {
        GroundingBundle {
            grounding: self.cfg.grounding(),
            session: self,
        }
    }
}

struct GroundingBundle<'s> {
    grounding: crate::grounding::GroundingConfig,
    session: &'s Session<'s>,
}

impl GroundingBundle<'_> {
    fn get(&self) -> Grounder<'_> {
        Grounder {
            chat: self.session.providers.chat.as_ref(),
            pack: &self.session.pack,
            cfg: &self.grounding,
            workers: &self.session.workers,
        }
    }
}

/// A training image as the manifest names it, plus the path used to read it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainImage {
    pub manifest_path: String,
    pub image: ImageRef,
}

fn train_images(s: &Session<'_>, manifest: &DatasetManifest) -> Vec<TrainImage> {
    manifest
        .sample_train(s.cfg.images_per_class_limit, s.seed)
        .into_iter()
        .map(|e| TrainImage {
            manifest_path: e.image_path.clone(),
            image: manifest.resolve(e),
        })
        .collect()
}

/// Discovery, grounding, and refinement products held in memory.
#[derive(Debug, Clone)]
pub struct VocabularyOutcome {
    pub train: Vec<TrainImage>,
    pub discovery: Discovery,
    pub contexts: Option<Vec<ContextSet>>,
    /// Every candidate, ranked, with its retained flag.
    pub scored: Vec<ScoredCandidate>,
    pub k_effective: usize,
}

impl VocabularyOutcome {
    pub fn retained_names(&self) -> Vec<String> {
        self.scored.iter().filter(|c| c.retained).map(|c| c.name().to_string()).collect()
    }

    pub fn artifact(&self, s: &Session<'_>) -> VocabularyArtifact {
        VocabularyArtifact {
            schema_version: SCHEMA_VERSION,
            seed: s.seed,
            config_hash: s.config_hash.clone(),
            meta_category: self.discovery.meta.clone(),
            attributes: self.discovery.attributes.clone(),
            train_images: self.train.iter().map(|t| t.manifest_path.clone()).collect(),
            candidates: self.discovery.candidates.names().to_vec(),
            k_effective: self.k_effective,
            retained: self.retained_names(),
        }
    }

    pub fn refinement_report(&self) -> Vec<RefinementRecord> {
        self.scored.iter().map(RefinementRecord::from).collect()
    }
}

/// Discover candidate names, ground them, and rank them against the training images.
pub fn run_vocabulary(s: &Session<'_>, manifest: &DatasetManifest) -> Result<VocabularyOutcome> {
    let train = train_images(s, manifest);
    if train.is_empty() {
        return Err(Error::EmptyTrainSet).stage(Stage::Discovery);
    }
    let images: Vec<ImageRef> = train.iter().map(|t| t.image.clone()).collect();
    let p = s.providers;
    info!(images = images.len(), "discovery");
    let discovery = discover(&images, p.vqa.as_ref(), p.chat.as_ref(), &s.pack, &s.workers).stage(Stage::Discovery)?;
    info!(meta = %discovery.meta.name, candidates = discovery.candidates.len(), "grounding");

    let names = discovery.candidates.names().to_vec();
    let bundle = s.grounder();
    let contexts = generate_all_contexts(&names, &discovery.meta, p.chat.as_ref(), &s.pack, &bundle.grounding, &s.workers)
        .stage(Stage::Grounding)?;
    let grounded = text_prototypes(
        &names,
        &discovery.meta,
        contexts.as_deref(),
        p.filtration.as_ref(),
        s.cfg.renormalize_prototypes,
        &s.workers,
    )
    .stage(Stage::Grounding)?;

    let refine = s.cfg.refinement();
    let image_vecs = s
        .workers
        .map(&images, |img| p.filtration.embed_image(img, None))
        .stage(Stage::Refinement)?;
    let scored = filter_top_k(score_candidates(grounded, &image_vecs).stage(Stage::Refinement)?, &refine);
    let k_effective = refine.k_effective(scored.len());
    info!(retained = k_effective, of = scored.len(), "refinement");
    Ok(VocabularyOutcome {
        train,
        discovery,
        contexts,
        scored,
        k_effective,
    })
}

pub fn write_vocabulary(s: &Session<'_>, v: &VocabularyOutcome, dir: &Path, w: &mut ArtifactWriter) -> Result<()> {
    w.write(dir, VOCABULARY_FILE, &json_bytes(&v.artifact(s))?)?;
    if let Some(ctx) = &v.contexts {
        w.write(dir, CONTEXTS_FILE, &jsonl_bytes(ctx)?)?;
    }
    w.write(dir, REFINEMENT_FILE, &json_bytes(&v.refinement_report())?)?;
    Ok(())
}

/// Vocabulary products as read back from disk.
#[derive(Debug, Clone)]
pub struct StoredVocabulary {
    pub vocabulary: VocabularyArtifact,
    pub contexts: Option<Vec<ContextSet>>,
}

impl StoredVocabulary {
    pub fn load(dir: &Path) -> Result<Self> {
        let vocabulary: VocabularyArtifact = read_json(&dir.join(VOCABULARY_FILE))?;
        let ctx_path = dir.join(CONTEXTS_FILE);
        let contexts = if ctx_path.exists() { Some(read_jsonl(&ctx_path)?) } else { None };
        Ok(Self { vocabulary, contexts })
    }
}

/// Text prototypes of the retained names under the inference embedder. Reuses
/// the refinement vectors when both embedders are the same model.
fn retained_prototypes(
    s: &Session<'_>,
    meta: &MetaCategory,
    retained: &[String],
    contexts: Option<&[ContextSet]>,
    scored: Option<&[ScoredCandidate]>,
) -> Result<Vec<GroundedClass>> {
    let p = s.providers;
    let same = p.filtration.text_fingerprint() == p.embedder.text_fingerprint();
    if let (true, Some(scored)) = (same, scored) {
        return Ok(scored.iter().filter(|c| c.retained).map(|c| c.grounded.clone()).collect());
    }
    if s.cfg.ccg_enabled && contexts.is_none() {
        return Err(Error::Precondition("contexts are missing for a grounded vocabulary".into()));
    }
    text_prototypes(
        retained,
        meta,
        contexts.filter(|_| s.cfg.ccg_enabled),
        p.embedder.as_ref(),
        s.cfg.renormalize_prototypes,
        &s.workers,
    )
}

/// Builds the classifier for the configured mode.
///
/// Vocabulary-free mode needs the vocabulary; the other modes ignore it.
pub fn build_classifier(
    s: &Session<'_>,
    manifest: &DatasetManifest,
    vocab: Option<&VocabularyOutcome>,
    stored: Option<&StoredVocabulary>,
) -> Result<(CoupledClassifier, Option<PseudoLabelAssignment>)> {
    let p = s.providers;
    let embedder: &dyn VisionLanguageEmbedder = p.embedder.as_ref();
    let cfg = s.cfg.classifier();
    let bundle = s.grounder();
    match s.cfg.mode {
        ClassifierMode::VocabularyFree => {
            let (meta, retained, contexts, train, scored) = match (vocab, stored) {
                (Some(v), _) => (
                    v.discovery.meta.clone(),
                    v.retained_names(),
                    v.contexts.clone(),
                    v.train.iter().map(|t| t.image.clone()).collect::<Vec<_>>(),
                    Some(v.scored.as_slice()),
                ),
                (None, Some(st)) => {
                    let train = st
                        .vocabulary
                        .train_images
                        .iter()
                        .map(|path| {
                            manifest
                                .split(Split::Train)
                                .into_iter()
                                .find(|e| e.image_path == *path)
                                .map(|e| manifest.resolve(e))
                                .ok_or_else(|| Error::Manifest(format!("vocabulary image {path} not in manifest")))
                        })
                        .collect::<Result<Vec<_>>>()
                        .stage(Stage::Classifier)?;
                    (
                        st.vocabulary.meta_category.clone(),
                        st.vocabulary.retained.clone(),
                        st.contexts.clone(),
                        train,
                        None,
                    )
                }
                (None, None) => {
                    return Err(Error::Precondition("vocabulary-free mode needs discovery output".into()))
                        .stage(Stage::Classifier)
                }
            };
            let text = retained_prototypes(s, &meta, &retained, contexts.as_deref(), scored).stage(Stage::Grounding)?;
            let (clf, assignment) =
                build_vocabulary_free(&train, &text, &cfg, s.seed, embedder, &s.workers).stage(Stage::Classifier)?;
            Ok((clf, Some(assignment)))
        }
        ClassifierMode::ZeroShot => {
            let names = s
                .cfg
                .class_names
                .clone()
                .filter(|n| !n.is_empty())
                .ok_or_else(|| Error::Config("zero_shot mode needs class names".into()))
                .stage(Stage::Config)?;
            let meta = MetaCategory::new(s.cfg.meta_category.as_deref().unwrap_or_default(), 0).stage(Stage::Config)?;
            let clf = build_zero_shot(&names, &meta, &bundle.get(), &cfg, embedder).stage(Stage::Classifier)?;
            Ok((clf, None))
        }
        ClassifierMode::FewShot => {
            let train = manifest.sample_train(s.cfg.images_per_class_limit, s.seed);
            if train.is_empty() {
                return Err(Error::EmptyTrainSet).stage(Stage::Classifier);
            }
            let unlabeled: Vec<&str> = train
                .iter()
                .filter(|e| e.gt_label.is_none())
                .map(|e| e.image_path.as_str())
                .collect();
            if !unlabeled.is_empty() {
                return Err(Error::Precondition(format!(
                    "few_shot mode needs a label on every training image; missing on {}",
                    unlabeled.join(", ")
                )))
                .stage(Stage::Classifier);
            }
            let support: Vec<(ImageRef, String)> = train
                .iter()
                .map(|e| (manifest.resolve(e), e.gt_label.clone().expect("checked above")))
                .collect();
            let labels: Vec<String> = support.iter().map(|(_, l)| l.clone()).collect::<BTreeSet<_>>().into_iter().collect();
            let meta = match s.cfg.meta_category.as_deref() {
                Some(g) => MetaCategory::new(g, 0).stage(Stage::Config)?,
                None => {
                    let imgs: Vec<ImageRef> = support.iter().map(|(i, _)| i.clone()).collect();
                    infer_meta_category(&imgs, p.vqa.as_ref(), p.chat.as_ref(), &s.pack, &s.workers)
                        .stage(Stage::Discovery)?
                }
            };
            let clf = build_few_shot(&labels, &support, &meta, &bundle.get(), &cfg, s.seed, embedder)
                .stage(Stage::Classifier)?;
            Ok((clf, None))
        }
    }
}

pub fn classifier_artifact(s: &Session<'_>, clf: CoupledClassifier) -> ClassifierArtifact {
    ClassifierArtifact {
        schema_version: SCHEMA_VERSION,
        seed: s.seed,
        config_hash: s.config_hash.clone(),
        classifier: clf,
    }
}

/// One record per test entry, in manifest order. Unreadable or failing images
/// become error records; the run continues.
pub fn classify_manifest(
    manifest: &DatasetManifest,
    clf: &CoupledClassifier,
    embedder: &dyn VisionLanguageEmbedder,
    workers: &Workers,
) -> Result<Vec<PredictionRecord>> {
    clf.check_embedder(embedder.image_fingerprint()).stage(Stage::Classify)?;
    let test = manifest.split(Split::Test);
    if test.is_empty() {
        return Err(Error::Precondition("manifest has no test entries".into())).stage(Stage::Classify);
    }
    let records = workers
        .map(&test, |e| {
            let shown = ImageRef::new(&e.image_path);
            let outcome = embedder
                .embed_image(&manifest.resolve(e), None)
                .and_then(|v| classify_embedding(shown, &v, clf));
            Ok(match outcome {
                Ok(p) => PredictionRecord::Ok(p),
                Err(err) => {
                    warn!(image = %e.image_path, error = %err, "classification failed");
                    PredictionRecord::Failed {
                        image: e.image_path.clone(),
                        error: err.to_string(),
                    }
                }
            })
        })
        .stage(Stage::Classify)?;
    Ok(records)
}

/// Metrics over the successful predictions, plus per-image rows and the
/// number of failed records skipped.
pub fn evaluate_records(
    records: &[PredictionRecord],
    manifest: &DatasetManifest,
    sem: &dyn crate::providers::TextEmbedder,
    vocabulary: Option<&VocabularyArtifact>,
) -> Result<(MetricsReport, Vec<PerImageRow>, usize)> {
    let ok: Vec<_> = records
        .iter()
        .filter_map(|r| match r {
            PredictionRecord::Ok(p) => Some(p),
            PredictionRecord::Failed { .. } => None,
        })
        .collect();
    let failed = records.len() - ok.len();
    let images: Vec<String> = ok.iter().map(|p| p.image.path().to_string_lossy().into_owned()).collect();
    let missing: Vec<String> = images.iter().filter(|i| manifest.label_of(i).is_none()).cloned().collect();
    if !missing.is_empty() {
        return Err(Error::MissingGroundTruth(missing)).stage(Stage::Evaluate);
    }
    if ok.is_empty() {
        return Err(Error::Precondition("no successful predictions to evaluate".into())).stage(Stage::Evaluate);
    }
    let predicted: Vec<&str> = ok.iter().map(|p| p.predicted_name.as_str()).collect();
    let gts: Vec<&str> = images.iter().map(|i| manifest.label_of(i).expect("checked above")).collect();
    let (mut report, sims) = evaluate(&predicted, &gts, sem).stage(Stage::Evaluate)?;
    if let Some(v) = vocabulary {
        let gt_names: Vec<&str> = manifest
            .entries()
            .iter()
            .filter_map(|e| e.gt_label.as_deref())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        report.filtration = Some(filtration_sensitivity(&v.candidates, &v.retained, &gt_names));
    }
    let rows = images
        .iter()
        .zip(&predicted)
        .zip(&gts)
        .zip(&sims)
        .map(|(((image, p), g), s)| PerImageRow {
            image: image.clone(),
            predicted: p.to_string(),
            gt: g.to_string(),
            sem_similarity: *s,
        })
        .collect();
    Ok((report, rows, failed))
}

fn write_metrics(
    s_seed: u64,
    config_hash: &str,
    report: &MetricsReport,
    rows: &[PerImageRow],
    failed: usize,
    dir: &Path,
    w: &mut ArtifactWriter,
) -> Result<MetricsArtifact> {
    let artifact = MetricsArtifact {
        schema_version: SCHEMA_VERSION,
        seed: s_seed,
        config_hash: config_hash.to_string(),
        report: report.clone(),
        n_failed: failed,
    };
    w.write(dir, METRICS_FILE, &json_bytes(&artifact)?)?;
    let mut csv = Vec::new();
    write_per_image_csv(&mut csv, rows)?;
    w.write(dir, PER_IMAGE_FILE, &csv)?;
    Ok(artifact)
}

/// `discover`: vocabulary, contexts, and refinement report.
pub fn cli_discover(
    cfg: &RunConfig,
    manifest: &DatasetManifest,
    providers: &Providers,
    opts: &RunOptions,
) -> Result<VocabularyOutcome> {
    let s = Session::new(cfg, cfg.seed, providers)?;
    let v = run_vocabulary(&s, manifest)?;
    write_vocabulary(&s, &v, &opts.out_dir, &mut ArtifactWriter::default()).stage(Stage::Artifacts)?;
    Ok(v)
}

/// `build`: classifier artifact. Vocabulary-free mode reads the discovery
/// output from `vocabulary_dir`.
pub fn cli_build(
    cfg: &RunConfig,
    manifest: &DatasetManifest,
    providers: &Providers,
    vocabulary_dir: &Path,
    opts: &RunOptions,
) -> Result<ClassifierArtifact> {
    let s = Session::new(cfg, cfg.seed, providers)?;
    let stored = match cfg.mode {
        ClassifierMode::VocabularyFree => Some(StoredVocabulary::load(vocabulary_dir).stage(Stage::Artifacts)?),
        _ => None,
    };
    let (clf, _) = build_classifier(&s, manifest, None, stored.as_ref())?;
    let artifact = classifier_artifact(&s, clf);
    write_atomic(&opts.out_dir.join(CLASSIFIER_FILE), &json_bytes(&artifact)?).stage(Stage::Artifacts)?;
    Ok(artifact)
}

/// `classify`: predictions for every test entry.
pub fn cli_classify(
    cfg: &RunConfig,
    manifest: &DatasetManifest,
    classifier: &Path,
    providers: &Providers,
    opts: &RunOptions,
) -> Result<Vec<PredictionRecord>> {
    cfg.validate().stage(Stage::Config)?;
    let artifact = ClassifierArtifact::load(classifier).stage(Stage::Classify)?;
    let workers = Workers::new(cfg.max_parallel_requests).stage(Stage::Config)?;
    let records = classify_manifest(manifest, &artifact.classifier, providers.embedder.as_ref(), &workers)?;
    write_atomic(&opts.out_dir.join(PREDICTIONS_FILE), &jsonl_bytes(&records)?).stage(Stage::Artifacts)?;
    Ok(records)
}

/// `evaluate`: metrics from a persisted predictions file. Filtration counts
/// are added when `vocabulary` points at a vocabulary artifact.
pub fn cli_evaluate(
    cfg: &RunConfig,
    manifest: &DatasetManifest,
    predictions: &Path,
    vocabulary: Option<&Path>,
    providers: &Providers,
    opts: &RunOptions,
) -> Result<MetricsArtifact> {
    let records: Vec<PredictionRecord> = read_jsonl(predictions).stage(Stage::Evaluate)?;
    let vocab: Option<VocabularyArtifact> = match vocabulary {
        Some(p) => Some(read_json(p).stage(Stage::Evaluate)?),
        None => None,
    };
    let (report, rows, failed) = evaluate_records(&records, manifest, providers.semantic.as_ref(), vocab.as_ref())?;
    write_metrics(
        cfg.seed,
        &cfg.config_hash(),
        &report,
        &rows,
        failed,
        &opts.out_dir,
        &mut ArtifactWriter::default(),
    )
    .stage(Stage::Artifacts)
}

/// Products of one seeded end-to-end pass.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub vocabulary: Option<VocabularyOutcome>,
    pub classifier: CoupledClassifier,
    pub assignment: Option<PseudoLabelAssignment>,
    pub predictions: Vec<PredictionRecord>,
    pub metrics: Option<MetricsReport>,
}

fn run_once(
    cfg: &RunConfig,
    seed: u64,
    manifest: &DatasetManifest,
    providers: &Providers,
    dir: &Path,
    opts: &RunOptions,
) -> Result<RunOutcome> {
    let started = opts.now();
    let s = Session::new(cfg, seed, providers)?;
    let mut w = ArtifactWriter::default();

    let vocabulary = match cfg.mode {
        ClassifierMode::VocabularyFree => {
            let v = run_vocabulary(&s, manifest)?;
            write_vocabulary(&s, &v, dir, &mut w).stage(Stage::Artifacts)?;
            Some(v)
        }
        _ => None,
    };
    let (classifier, assignment) = build_classifier(&s, manifest, vocabulary.as_ref(), None)?;
    let artifact = classifier_artifact(&s, classifier);
    w.write(dir, CLASSIFIER_FILE, &json_bytes(&artifact)?).stage(Stage::Artifacts)?;

    let predictions = classify_manifest(manifest, &artifact.classifier, providers.embedder.as_ref(), &s.workers)?;
    w.write(dir, PREDICTIONS_FILE, &jsonl_bytes(&predictions)?).stage(Stage::Artifacts)?;

    let test = manifest.split(Split::Test);
    let metrics = if test.iter().all(|e| e.gt_label.is_none()) {
        warn!("test split has no labels; skipping evaluation");
        None
    } else {
        let vocab_artifact = vocabulary.as_ref().map(|v| v.artifact(&s));
        let (report, rows, failed) =
            evaluate_records(&predictions, manifest, providers.semantic.as_ref(), vocab_artifact.as_ref())?;
        write_metrics(seed, &s.config_hash, &report, &rows, failed, dir, &mut w).stage(Stage::Artifacts)?;
        Some(report)
    };

    let train_list: Vec<String> = match &vocabulary {
        Some(v) => v.train.iter().map(|t| t.manifest_path.clone()).collect(),
        None if cfg.mode == ClassifierMode::FewShot => manifest
            .sample_train(cfg.images_per_class_limit, seed)
            .into_iter()
            .map(|e| e.image_path.clone())
            .collect(),
        None => Vec::new(),
    };
    let run_cfg = RunConfig { seed, ..cfg.clone() };
    let uses_chat = cfg.mode != ClassifierMode::ZeroShot || cfg.ccg_enabled;
    let uses_vqa = cfg.mode == ClassifierMode::VocabularyFree
        || (cfg.mode == ClassifierMode::FewShot && cfg.meta_category.is_none());
    let run_manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        config_hash: s.config_hash.clone(),
        mode: cfg.mode,
        config: run_cfg,
        providers: ProviderFingerprints {
            chat: uses_chat.then(|| providers.chat.fingerprint().clone()),
            vqa: uses_vqa.then(|| providers.vqa.fingerprint().clone()),
            text_embedder: providers.embedder.text_fingerprint().clone(),
            image_embedder: providers.embedder.image_fingerprint().clone(),
            filtration_embedder: providers.filtration.text_fingerprint().clone(),
            semantic_embedder: providers.semantic.text_fingerprint().clone(),
        },
        train_images: train_list,
        n_test_images: test.len(),
        timestamps: Timestamps {
            started_unix: started,
            finished_unix: opts.now(),
        },
        artifacts: w.digests().clone(),
    };
    write_atomic(&dir.join(RUN_MANIFEST_FILE), &json_bytes(&run_manifest)?).stage(Stage::Artifacts)?;
    info!(seed, dir = %dir.display(), "run complete");
    Ok(RunOutcome {
        seed,
        out_dir: dir.to_path_buf(),
        vocabulary,
        classifier: artifact.classifier,
        assignment,
        predictions,
        metrics,
    })
}

/// `run-all`: discovery through evaluation. With `repeat_runs > 1`, run `i`
/// uses seed `seed + i` and writes to `run_{i:03}/`, and an aggregate report
/// with mean and standard deviation is written at the top level.
pub fn cli_run_all(
    cfg: &RunConfig,
    manifest: &DatasetManifest,
    providers_for_seed: &dyn Fn(u64) -> Result<Providers>,
    opts: &RunOptions,
) -> Result<Vec<RunOutcome>> {
    cfg.validate().stage(Stage::Config)?;
    if cfg.repeat_runs == 1 {
        let providers = providers_for_seed(cfg.seed).stage(Stage::Config)?;
        return Ok(vec![run_once(cfg, cfg.seed, manifest, &providers, &opts.out_dir, opts)?]);
    }
    let mut outcomes = Vec::with_capacity(cfg.repeat_runs);
    for i in 0..cfg.repeat_runs {
        let seed = cfg.seed.wrapping_add(i as u64);
        let providers = providers_for_seed(seed).stage(Stage::Config)?;
        let dir = opts.out_dir.join(format!("run_{i:03}"));
        outcomes.push(run_once(cfg, seed, manifest, &providers, &dir, opts)?);
    }
    let runs: Vec<MetricsReport> = outcomes.iter().filter_map(|o| o.metrics.clone()).collect();
    if runs.len() == outcomes.len() {
        let aggregate = AggregateReport {
            schema_version: SCHEMA_VERSION,
            config_hash: cfg.config_hash(),
            seeds: outcomes.iter().map(|o| o.seed).collect(),
            cacc: MeanStd::of(&runs.iter().map(|r| r.cacc).collect::<Vec<_>>()),
            sacc: MeanStd::of(&runs.iter().map(|r| r.sacc).collect::<Vec<_>>()),
            runs,
        };
        write_atomic(&opts.out_dir.join(AGGREGATE_FILE), &json_bytes(&aggregate)?).stage(Stage::Artifacts)?;
    }
    Ok(outcomes)
}

/// Reads a names file: one name per line, blank lines and `#` comments ignored.
pub fn read_names_file(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut seen = BTreeSet::new();
    let mut names = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        if seen.insert(name_key(line)) {
            names.push(line.to_string());
        }
    }
    if names.is_empty() {
        return Err(Error::Config(format!("{} lists no class names", path.display())));
    }
    Ok(names)
}
