//! Exact double-precision vector arithmetic shared by every scoring step.
//!
//! Everything here is a pure function over immutable inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norms at or below this are treated as zero.
pub const EPS_NORM: f64 = 1e-12;

/// A finite, non-empty real vector living in a shared embedding space.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self(values))
    }

    /// Widen single-precision wire values.
    pub fn from_f32(values: &[f32]) -> Result<Self> {
        Self::new(values.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        check_dims(self, other)?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(self.0.iter().map(|v| v * factor).collect())
    }
}

impl<'de> Deserialize<'de> for EmbeddingVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let values = Vec::<f64>::deserialize(d)?;
        EmbeddingVector::new(values).map_err(serde::de::Error::custom)
    }
}

/// An embedding with unit l2 norm.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector(EmbeddingVector);

impl UnitVector {
    pub fn as_embedding(&self) -> &EmbeddingVector {
        &self.0
    }

    pub fn into_embedding(self) -> EmbeddingVector {
        self.0
    }

    pub fn values(&self) -> &[f64] {
        self.0.values()
    }
}

fn check_dims(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    Ok(())
}

fn nonzero_norm(v: &EmbeddingVector) -> Result<f64> {
    let n = v.norm();
    if n <= EPS_NORM {
        return Err(Error::ZeroNormVector);
    }
    Ok(n)
}

pub fn normalize(v: &EmbeddingVector) -> Result<UnitVector> {
    let n = nonzero_norm(v)?;
    Ok(UnitVector(EmbeddingVector(
        v.values().iter().map(|x| x / n).collect(),
    )))
}

/// Cosine similarity clamped to [-1, 1].
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    check_dims(a, b)?;
    let na = nonzero_norm(a)?;
    let nb = nonzero_norm(b)?;
    let dot: f64 = a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Average of the l2-normalized inputs. The result is not re-normalized, so its
/// norm is at most one.
pub fn mean_of_normalized(vs: &[EmbeddingVector]) -> Result<EmbeddingVector> {
    let first = vs.first().ok_or(Error::EmptyInput)?;
    let mut acc = vec![0.0; first.dim()];
    for v in vs {
        check_dims(first, v)?;
        let n = nonzero_norm(v)?;
        for (a, x) in acc.iter_mut().zip(v.values()) {
            *a += x / n;
        }
    }
    let m = vs.len() as f64;
    EmbeddingVector::new(acc.into_iter().map(|a| a / m).collect())
}

/// `alpha * a + (1 - alpha) * b`.
pub fn convex_combination(a: &EmbeddingVector, b: &EmbeddingVector, alpha: f64) -> Result<EmbeddingVector> {
    check_dims(a, b)?;
    EmbeddingVector::new(
        a.values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| alpha * x + (1.0 - alpha) * y)
            .collect(),
    )
}

/// Index of the maximum score; ties go to the smallest key.
pub fn argmax_by_key<'a, K: Ord + ?Sized>(scored: impl IntoIterator<Item = (&'a K, f64)>) -> Option<(&'a K, f64)> {
    let mut best: Option<(&K, f64)> = None;
    for (key, score) in scored {
        best = match best {
            None => Some((key, score)),
            Some((bk, bs)) if score > bs || (score == bs && key < bk) => Some((key, score)),
            keep => keep,
        };
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(v: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize(&ev(&[3.0, 4.0])).unwrap().values(), &[0.6, 0.8]);
        assert_eq!(normalize(&ev(&[1.0, 0.0, 0.0])).unwrap().values(), &[1.0, 0.0, 0.0]);
        assert!(matches!(normalize(&ev(&[0.0, 0.0])), Err(Error::ZeroNormVector)));
    }

    #[test]
    fn cosine_examples() {
        let a = ev(&[0.6, 0.8]);
        assert!((cosine(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&ev(&[1.0, 0.0]), &ev(&[0.0, 1.0])).unwrap(), 0.0);
        assert_eq!(cosine(&ev(&[1.0, 0.0]), &ev(&[-1.0, 0.0])).unwrap(), -1.0);
        assert!(matches!(
            cosine(&ev(&[1.0, 0.0]), &ev(&[1.0, 0.0, 0.0])),
            Err(Error::DimensionMismatch { expected: 2, got: 3 })
        ));
        assert!(matches!(cosine(&ev(&[1.0, 0.0]), &ev(&[0.0, 0.0])), Err(Error::ZeroNormVector)));
    }

    #[test]
    fn mean_of_normalized_examples() {
        assert_eq!(mean_of_normalized(&[ev(&[2.0, 0.0])]).unwrap().values(), &[1.0, 0.0]);
        assert_eq!(
            mean_of_normalized(&[ev(&[1.0, 0.0]), ev(&[0.0, 1.0])]).unwrap().values(),
            &[0.5, 0.5]
        );
        assert!(matches!(mean_of_normalized(&[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(EmbeddingVector::new(vec![1.0, f64::NAN]), Err(Error::NonFinite)));
        assert!(serde_json::from_str::<EmbeddingVector>("[]").is_err());
    }

    #[test]
    fn argmax_ties_go_lexicographic() {
        let scored = [("b", 0.5), ("a", 0.5), ("c", 0.1)];
        let best = argmax_by_key(scored.iter().map(|(k, s)| (*k, *s))).unwrap();
        assert_eq!(best.0, "a");
    }

    fn vec_strategy(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-10.0f64..10.0, dim).prop_filter("nonzero", |v| {
            v.iter().map(|x| x * x).sum::<f64>().sqrt() > 1e-3
        })
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(v in vec_strategy(8)) {
            let once = normalize(&ev(&v)).unwrap();
            let twice = normalize(once.as_embedding()).unwrap();
            for (a, b) in once.values().iter().zip(twice.values()) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
            prop_assert!((once.as_embedding().norm() - 1.0).abs() <= 1e-6);
        }

        #[test]
        fn cosine_ignores_scale(a in vec_strategy(6), b in vec_strategy(6), lambda in 1e-3f64..1e3) {
            let (a, b) = (ev(&a), ev(&b));
            let base = cosine(&a, &b).unwrap();
            let na = normalize(&a).unwrap();
            let nb = normalize(&b).unwrap();
            prop_assert!((base - cosine(na.as_embedding(), nb.as_embedding()).unwrap()).abs() <= 1e-9);
            prop_assert!((base - cosine(&a.scaled(lambda).unwrap(), &b).unwrap()).abs() <= 1e-9);
        }

        #[test]
        fn mean_is_bounded_and_order_free(vs in proptest::collection::vec(vec_strategy(5), 1..12)) {
            let vecs: Vec<_> = vs.iter().map(|v| ev(v)).collect();
            let mean = mean_of_normalized(&vecs).unwrap();
            prop_assert!(mean.norm() <= 1.0 + 1e-9);
            let mut rev = vecs.clone();
            rev.reverse();
            let mean_rev = mean_of_normalized(&rev).unwrap();
            for (a, b) in mean.values().iter().zip(mean_rev.values()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }
}
