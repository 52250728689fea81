//! Clustering accuracy, semantic accuracy and the name-filtration audit.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::discovery::name_key;
use crate::error::{Error, Result};
use crate::providers::TextEmbedder;
use crate::vector::cosine;

/// Maximum-score one-to-one matching of size `min(P, T)`. Rectangular inputs
/// are zero-padded to square.
pub fn hungarian_assignment(score: &[Vec<f64>]) -> Result<Vec<(usize, usize)>> {
    let rows = score.len();
    let cols = score.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Err(Error::EmptyInput);
    }
    if score.iter().any(|r| r.len() != cols) {
        return Err(Error::Precondition("score matrix rows differ in length".into()));
    }
    if score.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    let n = rows.max(cols);
    let cost = |i: usize, j: usize| if i < rows && j < cols { -score[i][j] } else { 0.0 };

    // Shortest augmenting paths with potentials; indices are 1-based, 0 is the sentinel.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut pairs: Vec<(usize, usize)> = (1..=n)
        .filter(|&j| p[j] != 0)
        .map(|j| (p[j] - 1, j - 1))
        .filter(|&(i, j)| i < rows && j < cols)
        .collect();
    pairs.sort_unstable();
    Ok(pairs)
}

/// Counts of (predicted, ground truth) pairs; rows and columns sorted by name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub counts: Vec<Vec<u64>>,
    pub n_total: u64,
}

impl ContingencyTable {
    pub fn build<P: AsRef<str>, G: AsRef<str>>(predicted: &[P], gts: &[G]) -> Result<Self> {
        if predicted.len() != gts.len() {
            return Err(Error::LengthMismatch {
                left: predicted.len(),
                right: gts.len(),
            });
        }
        if predicted.is_empty() {
            return Err(Error::EmptyInput);
        }
        let index = |names: BTreeSet<&str>| -> BTreeMap<String, usize> {
            names.into_iter().enumerate().map(|(i, n)| (n.to_string(), i)).collect()
        };
        let rows = index(predicted.iter().map(AsRef::as_ref).collect());
        let cols = index(gts.iter().map(AsRef::as_ref).collect());
        let mut counts = vec![vec![0u64; cols.len()]; rows.len()];
        for (p, g) in predicted.iter().zip(gts) {
            counts[rows[p.as_ref()]][cols[g.as_ref()]] += 1;
        }
        Ok(Self {
            rows: rows.into_keys().collect(),
            cols: cols.into_keys().collect(),
            counts,
            n_total: predicted.len() as u64,
        })
    }
}

/// Fraction of images that land in the matched ground-truth class under the
/// best one-to-one cluster/class matching.
pub fn clustering_accuracy<P: AsRef<str>, G: AsRef<str>>(predicted: &[P], gts: &[G]) -> Result<f64> {
    let table = ContingencyTable::build(predicted, gts)?;
    let score: Vec<Vec<f64>> = table
        .counts
        .iter()
        .map(|r| r.iter().map(|&c| c as f64).collect())
        .collect();
    let matched: u64 = hungarian_assignment(&score)?
        .into_iter()
        .map(|(i, j)| table.counts[i][j])
        .sum();
    Ok(matched as f64 / table.n_total as f64)
}

/// Per-image `max(0, cosine)` between semantic embeddings of predicted and
/// true names. Each distinct string is embedded once.
pub fn semantic_similarities<P: AsRef<str>, G: AsRef<str>>(
    predicted: &[P],
    gts: &[G],
    sem: &dyn TextEmbedder,
) -> Result<Vec<f64>> {
    if predicted.len() != gts.len() {
        return Err(Error::LengthMismatch {
            left: predicted.len(),
            right: gts.len(),
        });
    }
    if predicted.is_empty() {
        return Err(Error::EmptyInput);
    }
    let unique: BTreeSet<&str> = predicted.iter().map(AsRef::as_ref).chain(gts.iter().map(AsRef::as_ref)).collect();
    let texts: Vec<String> = unique.iter().map(|s| s.to_string()).collect();
    let vectors = sem.embed_text(&texts)?;
    let lookup: BTreeMap<&str, _> = unique.into_iter().zip(vectors.iter()).collect();
    predicted
        .iter()
        .zip(gts)
        .map(|(p, g)| Ok(cosine(lookup[p.as_ref()], lookup[g.as_ref()])?.max(0.0)))
        .collect()
}

pub fn semantic_accuracy<P: AsRef<str>, G: AsRef<str>>(predicted: &[P], gts: &[G], sem: &dyn TextEmbedder) -> Result<f64> {
    let sims = semantic_similarities(predicted, gts, sem)?;
    Ok(sims.iter().sum::<f64>() / sims.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FiltrationCounts {
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_count: usize,
}

/// Among guessed names that fully match a ground-truth name (case and
/// whitespace insensitive), how many survived refinement (`tp`) and how many
/// were filtered out (`fn`).
pub fn filtration_sensitivity<C, R, G>(candidates: &[C], retained: &[R], gt_names: &[G]) -> FiltrationCounts
where
    C: AsRef<str>,
    R: AsRef<str>,
    G: AsRef<str>,
{
    let gt: BTreeSet<String> = gt_names.iter().map(|g| name_key(g.as_ref())).collect();
    let kept: BTreeSet<String> = retained.iter().map(|r| name_key(r.as_ref())).collect();
    let matched: BTreeSet<String> = candidates
        .iter()
        .map(|c| name_key(c.as_ref()))
        .filter(|k| gt.contains(k))
        .collect();
    let tp = matched.iter().filter(|k| kept.contains(*k)).count();
    FiltrationCounts {
        tp,
        fn_count: matched.len() - tp,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub cacc: f64,
    pub sacc: f64,
    pub n_images: usize,
    pub n_pred_classes: usize,
    pub n_true_classes: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub filtration: Option<FiltrationCounts>,
}

/// One row of the per-image report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerImageRow {
    pub image: String,
    pub predicted: String,
    pub gt: String,
    pub sem_similarity: f64,
}

/// Full evaluation over aligned prediction names and ground truth.
pub fn evaluate<P: AsRef<str>, G: AsRef<str>>(
    predicted: &[P],
    gts: &[G],
    sem: &dyn TextEmbedder,
) -> Result<(MetricsReport, Vec<f64>)> {
    let cacc = clustering_accuracy(predicted, gts)?;
    let sims = semantic_similarities(predicted, gts, sem)?;
    let sacc = sims.iter().sum::<f64>() / sims.len() as f64;
    let distinct = |xs: Vec<&str>| xs.into_iter().collect::<BTreeSet<_>>().len();
    Ok((
        MetricsReport {
            cacc,
            sacc,
            n_images: predicted.len(),
            n_pred_classes: distinct(predicted.iter().map(AsRef::as_ref).collect()),
            n_true_classes: distinct(gts.iter().map(AsRef::as_ref).collect()),
            filtration: None,
        },
        sims,
    ))
}

pub fn write_per_image_csv<W: Write>(out: W, rows: &[PerImageRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| Error::Manifest(format!("csv: {e}")))?;
    }
    w.flush().map_err(|e| Error::io("per_image.csv", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::{ProviderFingerprint, ProviderKind, TextEmbedder};
    use crate::vector::EmbeddingVector;
    use proptest::prelude::*;

    fn total(m: &[Vec<f64>], pairs: &[(usize, usize)]) -> f64 {
        pairs.iter().map(|&(i, j)| m[i][j]).sum()
    }

    fn brute(m: &[Vec<f64>]) -> f64 {
        let (r, c) = (m.len(), m[0].len());
        let n = r.max(c);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut best = f64::NEG_INFINITY;
        permute(&mut perm, 0, &mut |p| {
            let s: f64 = (0..r).filter(|&i| p[i] < c).map(|i| m[i][p[i]]).sum();
            best = best.max(s);
        });
        best
    }

    fn permute(p: &mut Vec<usize>, k: usize, f: &mut dyn FnMut(&[usize])) {
        if k == p.len() {
            f(p);
            return;
        }
        for i in k..p.len() {
            p.swap(k, i);
            permute(p, k + 1, f);
            p.swap(k, i);
        }
    }

    #[test]
    fn hungarian_examples() {
        let d = vec![vec![5.0, 0.0, 0.0], vec![0.0, 5.0, 0.0], vec![0.0, 0.0, 5.0]];
        let pairs = hungarian_assignment(&d).unwrap();
        assert_eq!(pairs, vec![(0, 0), (1, 1), (2, 2)]);
        assert_eq!(total(&d, &pairs), 15.0);
        assert_eq!(hungarian_assignment(&[vec![7.0]]).unwrap(), vec![(0, 0)]);
        let wide = vec![vec![1.0, 9.0, 3.0]];
        assert_eq!(hungarian_assignment(&wide).unwrap(), vec![(0, 1)]);
        let tall = vec![vec![1.0], vec![4.0], vec![2.0]];
        assert_eq!(hungarian_assignment(&tall).unwrap(), vec![(1, 0)]);
        assert!(hungarian_assignment(&[]).is_err());
        assert!(hungarian_assignment(&[vec![f64::NAN]]).is_err());
    }

    #[test]
    fn cacc_examples() {
        let gts = ["a", "a", "b", "b", "c"];
        let renamed = ["x", "x", "y", "y", "z"];
        assert_eq!(clustering_accuracy(&renamed, &gts).unwrap(), 1.0);
        let one = ["k"; 8];
        let balanced = ["a", "a", "a", "a", "b", "b", "b", "b"];
        assert_eq!(clustering_accuracy(&one, &balanced).unwrap(), 0.5);
        assert!(matches!(
            clustering_accuracy(&["a"], &["a", "b"]),
            Err(Error::LengthMismatch { left: 1, right: 2 })
        ));
    }

    struct Table(BTreeMap<&'static str, Vec<f64>>, ProviderFingerprint);

    impl TextEmbedder for Table {
        fn text_fingerprint(&self) -> &ProviderFingerprint {
            &self.1
        }
        fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
            texts.iter().map(|t| EmbeddingVector::new(self.0[t.as_str()].clone())).collect()
        }
    }

    #[test]
    fn sacc_examples() {
        let fp = ProviderFingerprint::new(ProviderKind::TextEmbed, "t", "t", Some(2)).unwrap();
        let e = Table(
            [("up", vec![0.0, 1.0]), ("down", vec![0.0, -1.0]), ("right", vec![1.0, 0.0])].into(),
            fp,
        );
        assert_eq!(semantic_accuracy(&["up", "right"], &["up", "right"], &e).unwrap(), 1.0);
        assert_eq!(semantic_accuracy(&["up"], &["down"], &e).unwrap(), 0.0);
        let sims = semantic_similarities(&["up", "down", "right"], &["right", "up", "right"], &e).unwrap();
        assert_eq!(sims, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn filtration_examples() {
        let c = ["a", "b", "c", "zzz"];
        let f = filtration_sensitivity(&c, &["a"], &["A", "b ", "c"]);
        assert_eq!((f.tp, f.fn_count), (1, 2));
        let f = filtration_sensitivity(&c, &c, &["a", "b"]);
        assert_eq!((f.tp, f.fn_count), (2, 0));
        let f = filtration_sensitivity(&c, &c, &["q"]);
        assert_eq!((f.tp, f.fn_count), (0, 0));
    }

    #[test]
    fn csv_rows() {
        let mut buf = Vec::new();
        write_per_image_csv(
            &mut buf,
            &[PerImageRow {
                image: "a,b.png".into(),
                predicted: "x".into(),
                gt: "y".into(),
                sem_similarity: 0.5,
            }],
        )
        .unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "image,predicted,gt,sem_similarity\n\"a,b.png\",x,y,0.5\n"
        );
    }

    proptest! {
        #[test]
        fn hungarian_matches_brute_force(
            p in 1usize..6, t in 1usize..6,
            cells in proptest::collection::vec(-20i32..20, 36),
        ) {
            let m: Vec<Vec<f64>> = (0..p).map(|i| (0..t).map(|j| cells[i * 6 + j] as f64).collect()).collect();
            let pairs = hungarian_assignment(&m).unwrap();
            prop_assert_eq!(pairs.len(), p.min(t));
            let rows: BTreeSet<_> = pairs.iter().map(|x| x.0).collect();
            let cols: BTreeSet<_> = pairs.iter().map(|x| x.1).collect();
            prop_assert_eq!(rows.len(), pairs.len());
            prop_assert_eq!(cols.len(), pairs.len());
            // padded matching may pick a negative cell only when forced; compare against the padded optimum
            prop_assert_eq!(total(&m, &pairs), brute(&m));
        }

        #[test]
        fn cacc_bounds_and_invariance(
            labels in proptest::collection::vec((0u8..4, 0u8..3), 1..30),
            rot in 0usize..30,
        ) {
            let pred: Vec<String> = labels.iter().map(|(p, _)| format!("p{p}")).collect();
            let gts: Vec<String> = labels.iter().map(|(_, g)| format!("g{g}")).collect();
            let a = clustering_accuracy(&pred, &gts).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
            let renamed: Vec<String> = labels.iter().map(|(p, _)| format!("other{}", 3 - p)).collect();
            prop_assert_eq!(a, clustering_accuracy(&renamed, &gts).unwrap());
            let mut pairs: Vec<_> = pred.iter().zip(&gts).collect();
            let shift = rot % pairs.len();
            pairs.rotate_left(shift);
            let (rp, rg): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
            prop_assert_eq!(a, clustering_accuracy(&rp, &rg).unwrap());
        }

        #[test]
        fn filtration_conserves(
            cand in proptest::collection::btree_set(0u8..12, 0..10),
            kept_mask in proptest::collection::vec(any::<bool>(), 12),
            gt in proptest::collection::btree_set(0u8..12, 1..8),
        ) {
            let c: Vec<String> = cand.iter().map(|x| format!("n{x}")).collect();
            let r: Vec<String> = cand.iter().filter(|&&x| kept_mask[x as usize]).map(|x| format!("N{x}")).collect();
            let g: Vec<String> = gt.iter().map(|x| format!("n{x}")).collect();
            let f = filtration_sensitivity(&c, &r, &g);
            prop_assert_eq!(f.tp + f.fn_count, cand.intersection(&gt).count());
            let all = filtration_sensitivity(&c, &c, &g);
            prop_assert_eq!(all.fn_count, 0);
        }
    }
}
