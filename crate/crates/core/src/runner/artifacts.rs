//! On-disk artifact schemas and atomic JSON/JSONL IO.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classifier::{ClassifierMode, CoupledClassifier, Prediction};
use crate::discovery::{AttributeTable, MetaCategory};
use crate::error::{Error, Result};
use crate::evaluation::MetricsReport;
use crate::providers::ProviderFingerprint;

use super::config::RunConfig;

pub const SCHEMA_VERSION: u32 = 1;

pub const VOCABULARY_FILE: &str = "vocabulary.json";
pub const CONTEXTS_FILE: &str = "contexts.jsonl";
pub const REFINEMENT_FILE: &str = "refinement.json";
pub const CLASSIFIER_FILE: &str = "classifier.json";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const PER_IMAGE_FILE: &str = "per_image.csv";
pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";
pub const AGGREGATE_FILE: &str = "aggregate.json";

/// Discovery and refinement products.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabularyArtifact {
    pub schema_version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub meta_category: MetaCategory,
    pub attributes: AttributeTable,
    /// Manifest paths of the training images that were used, in order.
    pub train_images: Vec<String>,
    pub candidates: Vec<String>,
    pub k_effective: usize,
    pub retained: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierArtifact {
    pub schema_version: u32,
    pub seed: u64,
    pub config_hash: String,
    #[serde(flatten)]
    pub classifier: CoupledClassifier,
}

impl ClassifierArtifact {
    /// Parses and validates; any defect surfaces as `ClassifierArtifactCorrupt`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let a: Self = serde_json::from_str(&text)
            .map_err(|e| Error::ClassifierArtifactCorrupt(format!("{}: {e}", path.display())))?;
        if a.schema_version != SCHEMA_VERSION {
            return Err(Error::ClassifierArtifactCorrupt(format!(
                "unsupported schema_version {}",
                a.schema_version
            )));
        }
        a.classifier.validate()?;
        Ok(a)
    }
}

/// One predictions.jsonl line: a prediction or a per-image failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PredictionRecord {
    Ok(Prediction),
    Failed { image: String, error: String },
}

impl PredictionRecord {
    pub fn image(&self) -> String {
        match self {
            PredictionRecord::Ok(p) => p.image.path().to_string_lossy().into_owned(),
            PredictionRecord::Failed { image, .. } => image.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsArtifact {
    pub schema_version: u32,
    pub seed: u64,
    pub config_hash: String,
    #[serde(flatten)]
    pub report: MetricsReport,
    /// Prediction records that carried an error and were left out.
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderFingerprints {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chat: Option<ProviderFingerprint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vqa: Option<ProviderFingerprint>,
    pub text_embedder: ProviderFingerprint,
    pub image_embedder: ProviderFingerprint,
    pub filtration_embedder: ProviderFingerprint,
    pub semantic_embedder: ProviderFingerprint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timestamps {
    pub started_unix: u64,
    pub finished_unix: u64,
}

/// Everything needed to audit a run: config, providers, seed, and a digest of
/// each artifact written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub seed: u64,
    pub config_hash: String,
    pub mode: ClassifierMode,
    pub config: RunConfig,
    pub providers: ProviderFingerprints,
    pub train_images: Vec<String>,
    pub n_test_images: usize,
    pub timestamps: Timestamps,
    /// File name to lowercase hex sha256.
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Population standard deviation.
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len().max(1) as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub runs: Vec<MetricsReport>,
    pub cacc: MeanStd,
    pub sacc: MeanStd,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Write-to-temp then rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file()
            .set_permissions(std::fs::Permissions::from_mode(0o644))
            .map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn json_bytes<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}

pub fn jsonl_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    Ok(out)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Collects written files and their digests for the run manifest.
#[derive(Debug, Default)]
pub struct ArtifactWriter {
    digests: BTreeMap<String, String>,
}

impl ArtifactWriter {
    pub fn write(&mut self, dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&dir.join(name), bytes)?;
        self.digests.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn digests(&self) -> &BTreeMap<String, String> {
        &self.digests
    }

    pub fn into_digests(self) -> BTreeMap<String, String> {
        self.digests
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/x.json");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path().join("sub")).unwrap().count(), 1);
    }

    #[test]
    fn prediction_record_forms() {
        let ok: PredictionRecord =
            serde_json::from_str(r#"{"image":"a.png","predicted":"x","similarity":0.5,"runner_up_margin":0.1}"#)
                .unwrap();
        assert!(matches!(ok, PredictionRecord::Ok(_)));
        let bad: PredictionRecord = serde_json::from_str(r#"{"image":"b.png","error":"unreadable"}"#).unwrap();
        assert_eq!(bad.image(), "b.png");
        assert!(matches!(bad, PredictionRecord::Failed { .. }));
    }

    #[test]
    fn mean_std() {
        let m = MeanStd::of(&[1.0, 3.0]);
        assert_eq!((m.mean, m.std), (2.0, 1.0));
        assert_eq!(MeanStd::of(&[0.5]).std, 0.0);
    }
}
