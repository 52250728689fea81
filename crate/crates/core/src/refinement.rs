//! Class-name refinement: score every grounded candidate by its mean cosine
//! to the training images and softly keep the top-k.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grounding::GroundedClass;
use crate::vector::{cosine, EmbeddingVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefinementConfig {
    pub retention_ratio: f64,
    pub k_override: Option<usize>,
    pub cnr_enabled: bool,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self {
            retention_ratio: 0.8,
            k_override: None,
            cnr_enabled: true,
        }
    }
}

impl RefinementConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.retention_ratio > 0.0 && self.retention_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "retention_ratio must be in (0, 1], got {}",
                self.retention_ratio
            )));
        }
        if self.k_override == Some(0) {
            return Err(Error::Config("k_override must be at least 1".into()));
        }
        Ok(())
    }

    pub fn k_effective(&self, n: usize) -> usize {
        if !self.cnr_enabled {
            return n;
        }
        let k = self
            .k_override
            .unwrap_or_else(|| ((self.retention_ratio * n as f64).round() as usize).max(1));
        k.min(n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredCandidate {
    pub grounded: GroundedClass,
    pub score: f64,
    pub retained: bool,
}

impl ScoredCandidate {
    pub fn name(&self) -> &str {
        &self.grounded.class_name
    }
}

/// One row of the refinement report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementRecord {
    #[serde(rename = "class")]
    pub class_name: String,
    pub score: f64,
    pub retained: bool,
}

impl From<&ScoredCandidate> for RefinementRecord {
    fn from(c: &ScoredCandidate) -> Self {
        Self {
            class_name: c.name().to_string(),
            score: c.score,
            retained: c.retained,
        }
    }
}

/// Mean cosine similarity between `t_c` and every image embedding.
pub fn relevance_score(t_c: &EmbeddingVector, image_embeddings: &[EmbeddingVector]) -> Result<f64> {
    if image_embeddings.is_empty() {
        return Err(Error::EmptyTrainSet);
    }
    let mut sum = 0.0;
    for v in image_embeddings {
        sum += cosine(t_c, v)?;
    }
    Ok(sum / image_embeddings.len() as f64)
}

pub fn score_candidates(grounded: Vec<GroundedClass>, image_embeddings: &[EmbeddingVector]) -> Result<Vec<ScoredCandidate>> {
    grounded
        .into_iter()
        .map(|g| {
            let score = relevance_score(&g.t_c, image_embeddings)?;
            Ok(ScoredCandidate {
                grounded: g,
                score,
                retained: false,
            })
        })
        .collect()
}

fn rank(a: &ScoredCandidate, b: &ScoredCandidate) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.name().cmp(b.name()))
}

/// Marks the top `k_effective` candidates as retained. The output is sorted by
/// score descending, then name ascending, and still holds every candidate.
pub fn filter_top_k(mut candidates: Vec<ScoredCandidate>, cfg: &RefinementConfig) -> Vec<ScoredCandidate> {
    candidates.sort_by(rank);
    let k = cfg.k_effective(candidates.len());
    for (i, c) in candidates.iter_mut().enumerate() {
        c.retained = i < k;
    }
    candidates
}

pub fn retained(candidates: &[ScoredCandidate]) -> Vec<&ScoredCandidate> {
    candidates.iter().filter(|c| c.retained).collect()
}
