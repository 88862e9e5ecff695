//! Downstream protocols on frozen (or fine-tuned) sentence encoders.

mod classify;
mod rank;
pub mod synthetic;

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

pub use classify::{
    expected_score, finetune_classifier, finetune_on_split, pearson, relatedness_target, split_indices, train_linear_classifier,
    train_relatedness, ClassifierConfig, ClassifierReport, FinetuneConfig, FinetuneReport, LinearClassifier,
    RelatednessHead,
};
pub use rank::{
    brute_force_ranks, rank_eval, rank_of, ranking_loss, train_ranking, RankReport, RankingConfig, RankingModel,
    RANKING_MARGIN,
};

use crate::error::{dim_err, Error, Result};
use crate::model::{Container, Model, NamedTensor};
use crate::tensor::Real;

/// `[z_x * z_y ; |z_x - z_y|]`.
pub fn pair_features(zx: &[f64], zy: &[f64]) -> Result<Vec<f64>> {
    if zx.len() != zy.len() {
        return Err(dim_err("pair_features", "vector width", zx.len(), zy.len()));
    }
    let mut out: Vec<f64> = zx.iter().zip(zy).map(|(a, b)| a * b).collect();
    out.extend(zx.iter().zip(zy).map(|(a, b)| (a - b).abs()));
    Ok(out)
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(dim_err("cosine", "vector width", a.len(), b.len()));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb))
}

/// Exact top-`k` pool entries by cosine, descending; ties go to the lower pool index.
pub fn cosine_nn(query: &[f64], pool: &[Vec<f64>], top_k: usize) -> Result<Vec<(usize, f64)>> {
    let mut scored = pool
        .iter()
        .enumerate()
        .map(|(i, p)| cosine(query, p).map(|s| (i, s)))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(top_k);
    Ok(scored)
}

/// [`cosine_nn`] for many queries in parallel; output order follows `queries`.
pub fn cosine_nn_many(queries: &[Vec<f64>], pool: &[Vec<f64>], top_k: usize) -> Result<Vec<Vec<(usize, f64)>>> {
    queries.par_iter().map(|q| cosine_nn(q, pool, top_k)).collect()
}

/// Decodes `z(a) - z(b) + z(c)` greedily.
pub fn vector_arithmetic<F: Real>(
    model: &Model<F>,
    a: &[usize],
    b: &[usize],
    c: &[usize],
    max_len: usize,
) -> Result<Vec<usize>> {
    let (za, zb, zc) = (model.encode(a)?, model.encode(b)?, model.encode(c)?);
    let z: Vec<F> = za.iter().zip(&zb).zip(&zc).map(|((&x, &y), &w)| x - y + w).collect();
    model.greedy_decode(&z, max_len)
}

/// Sentence encodings in `f64`, one row per sentence.
pub fn encode_all<F: Real, S: AsRef<[usize]> + Sync>(model: &Model<F>, sentences: &[S]) -> Result<Vec<Vec<f64>>> {
    sentences
        .par_iter()
        .map(|s| Ok(model.encode(s.as_ref())?.iter().map(|v| v.as_f64()).collect()))
        .collect()
}

/// Encoded rows with aligned labels (class ids or real scores).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    /// Free-form origin, e.g. `checkpoint=model.ckpt corpus=data.txt`.
    pub provenance: String,
}

impl FeatureSet {
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<f64>, provenance: impl Into<String>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(dim_err("feature set", "labels", rows.len(), labels.len()));
        }
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != dim) {
            return Err(dim_err("feature set", format!("row {bad} width"), dim, rows[bad].len()));
        }
        if let Some(bad) = rows.iter().position(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(format!("feature row {bad}")));
        }
        Ok(Self {
            rows,
            labels,
            provenance: provenance.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `label<TAB>v1 v2 ...` per row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (row, label) in self.rows.iter().zip(&self.labels) {
            let values: Vec<String> = row.iter().map(f64::to_string).collect();
            let _ = writeln!(out, "{label}\t{}", values.join(" "));
        }
        out
    }

    pub fn from_tsv(text: &str, path: &Path) -> Result<Self> {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (label, values) = line
                .split_once('\t')
                .ok_or_else(|| parse_err(i + 1, "expected label<TAB>values".into()))?;
            labels.push(label.trim().parse().map_err(|_| parse_err(i + 1, format!("bad label `{label}`")))?);
            rows.push(
                values
                    .split_whitespace()
                    .map(|v| v.parse().map_err(|_| parse_err(i + 1, format!("bad value `{v}`"))))
                    .collect::<Result<Vec<f64>>>()?,
            );
        }
        Self::new(rows, labels, format!("tsv={}", path.display()))
    }

    /// Stores rows as an `n x dim` tensor named `features` and labels as `labels`.
    pub fn to_container(&self) -> Container {
        let mut tensors = Vec::new();
        if !self.is_empty() {
            tensors.push(NamedTensor {
                name: "features".into(),
                shape: vec![self.len(), self.dim().max(1)],
                values: self.rows.iter().flatten().map(|&v| v as f32).collect(),
            });
            tensors.push(NamedTensor {
                name: "labels".into(),
                shape: vec![self.len()],
                values: self.labels.iter().map(|&v| v as f32).collect(),
            });
        }
        Container {
            meta: format!("kind=features\nrows={}\ndim={}\nprovenance={}\n", self.len(), self.dim(), self.provenance),
            vocab: String::new(),
            tensors,
        }
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let provenance = crate::model::parse_kv(&c.meta)?
            .into_iter()
            .find(|(k, _)| k == "provenance")
            .map(|(_, v)| v)
            .unwrap_or_default();
        let Some(features) = c.get("features") else {
            return Self::new(Vec::new(), Vec::new(), provenance);
        };
        let labels = c
            .get("labels")
            .ok_or_else(|| Error::Integrity("feature dump lacks labels".into()))?;
        if features.shape.len() != 2 || labels.values.len() != features.shape[0] {
            return Err(Error::Integrity("feature dump shapes disagree".into()));
        }
        let rows = features
            .values
            .chunks(features.shape[1])
            .map(|r| r.iter().map(|&v| f64::from(v)).collect())
            .collect();
        Self::new(rows, labels.values.iter().map(|&v| f64::from(v)).collect(), provenance)
    }
}

/// Plain-text `key=value` report lines in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    pub entries: Vec<(String, String)>,
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl std::fmt::Display) -> &mut Self {
        self.entries.push((key.into(), value.to_string()));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }
}

impl std::fmt::Display for Report {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pair_features_hand_example() {
        assert_eq!(pair_features(&[1.0, 2.0], &[3.0, -1.0]).unwrap(), vec![3.0, -2.0, 2.0, 3.0]);
        assert_eq!(pair_features(&[2.0, -1.5], &[2.0, -1.5]).unwrap(), vec![4.0, 2.25, 0.0, 0.0]);
        assert!(pair_features(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn nn_finds_itself_and_ignores_scale() {
        let pool = vec![vec![1.0, 0.0, 0.0], vec![0.6, 0.8, 0.0], vec![0.0, 0.0, 1.0], vec![0.6, 0.8, 0.0]];
        let hits = cosine_nn(&pool[1], &pool, 4).unwrap();
        assert_eq!(hits[0].0, 1);
        assert!((hits[0].1 - 1.0).abs() < 1e-12);
        assert_eq!(hits[1].0, 3);
        let scaled: Vec<f64> = pool[1].iter().map(|v| v * 10.0).collect();
        let idx = |h: Vec<(usize, f64)>| h.into_iter().map(|(i, _)| i).collect::<Vec<_>>();
        assert_eq!(idx(cosine_nn(&scaled, &pool, 4).unwrap()), idx(hits));
        assert!(matches!(cosine_nn(&[0.0, 0.0, 0.0], &pool, 1), Err(Error::ZeroNorm)));
    }

    #[test]
    fn nn_orthogonal_pool_matches_full_scan() {
        let pool: Vec<Vec<f64>> = (0..5)
            .map(|i| (0..5).map(|j| if i == j { (i + 1) as f64 } else { 0.0 }).collect())
            .collect();
        let query = vec![0.1, 0.5, 0.2, 0.9, 0.3];
        let hits = cosine_nn(&query, &pool, 5).unwrap();
        let mut oracle: Vec<usize> = (0..5).collect();
        oracle.sort_by(|&a, &b| query[b].total_cmp(&query[a]));
        assert_eq!(hits.iter().map(|h| h.0).collect::<Vec<_>>(), oracle);
    }

    #[test]
    fn feature_tsv_and_container_round_trip() {
        let fs = FeatureSet::new(vec![vec![0.5, -1.25], vec![2.0, 0.0]], vec![1.0, 0.0], "unit").unwrap();
        let back = FeatureSet::from_tsv(&fs.to_tsv(), Path::new("x.tsv")).unwrap();
        assert_eq!(back.rows, fs.rows);
        assert_eq!(back.labels, fs.labels);
        let c = Container::from_bytes(&fs.to_container().to_bytes()).unwrap();
        assert_eq!(FeatureSet::from_container(&c).unwrap(), fs);
        let empty = FeatureSet::new(vec![], vec![], "none").unwrap();
        assert!(FeatureSet::from_container(&empty.to_container()).unwrap().is_empty());
    }

    #[test]
    fn report_lines() {
        let mut r = Report::new();
        r.push("accuracy", 0.5).push("n", 3);
        assert_eq!(r.to_string(), "accuracy=0.5\nn=3\n");
        assert_eq!(r.get("n"), Some("3"));
    }

    proptest! {
        #[test]
        fn pair_features_symmetric(v in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..20)) {
            let (a, b): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
            let ab = pair_features(&a, &b).unwrap();
            prop_assert_eq!(ab.len(), 2 * a.len());
            prop_assert_eq!(ab, pair_features(&b, &a).unwrap());
        }

        #[test]
        fn nn_invariant_to_pool_rescaling(
            pool in prop::collection::vec(prop::collection::vec(0.1f64..1.0, 3), 2..10),
            factor in 0.5f64..20.0, which in 0usize..10,
        ) {
            let query = vec![0.3, 0.2, 0.7];
            let before: Vec<usize> = cosine_nn(&query, &pool, pool.len()).unwrap().into_iter().map(|h| h.0).collect();
            let mut scaled = pool.clone();
            let w = which % pool.len();
            scaled[w].iter_mut().for_each(|v| *v *= factor);
            let after: Vec<usize> = cosine_nn(&query, &scaled, pool.len()).unwrap().into_iter().map(|h| h.0).collect();
            prop_assert_eq!(before, after);
        }
    }
}
