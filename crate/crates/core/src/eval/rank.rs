use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{dim_err, Error, Result};
use crate::model::Adam;
use crate::tensor::{ParamId, ParamSet, Tape, Tensor};

/// Margin of the pairwise ranking hinge.
pub const RANKING_MARGIN: f64 = 0.1;

/// Mean of `max(0, alpha - related + unrelated)` over aligned triples.
pub fn ranking_loss(related: &[f64], unrelated: &[f64], alpha: f64) -> Result<f64> {
    if related.len() != unrelated.len() {
        return Err(dim_err("ranking_loss", "triples", related.len(), unrelated.len()));
    }
    if related.is_empty() {
        return Err(Error::Protocol("no triples to score".into()));
    }
    let total: f64 = related.iter().zip(unrelated).map(|(r, u)| (alpha - r + u).max(0.0)).sum();
    Ok(total / related.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankingConfig {
    pub alpha: f64,
    pub shared_dim: usize,
    pub epochs: usize,
    /// Unrelated items sampled per related pair in each epoch.
    pub negatives: usize,
    pub learning_rate: f64,
    pub init_range: f64,
    pub seed: u64,
}

impl Default for RankingConfig {
    fn default() -> Self {
        Self {
            alpha: RANKING_MARGIN,
            shared_dim: 32,
            epochs: 300,
            negatives: 5,
            learning_rate: 0.01,
            init_range: 0.1,
            seed: 0,
        }
    }
}

/// Linear projections of captions and items into a shared space scored by cosine.
#[derive(Clone, Debug)]
pub struct RankingModel {
    params: ParamSet<f64>,
    caption: ParamId,
    item: ParamId,
}

impl RankingModel {
    fn project(&self, id: ParamId, x: &[f64]) -> Vec<f64> {
        let w = self.params.tensor(id);
        let (rows, cols) = w.dims2();
        let mut out = vec![0.0; cols];
        for (r, v) in x.iter().enumerate().take(rows) {
            for (o, wv) in out.iter_mut().zip(w.row(r)) {
                *o += v * wv;
            }
        }
        out
    }

    /// `f(x, y)`.
    pub fn score(&self, caption: &[f64], item: &[f64]) -> Result<f64> {
        super::cosine(&self.project(self.caption, caption), &self.project(self.item, item))
    }

    /// `queries x pool` score matrix.
    pub fn score_matrix(&self, captions: &[Vec<f64>], items: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let pool: Vec<Vec<f64>> = items.iter().map(|y| self.project(self.item, y)).collect();
        captions
            .par_iter()
            .map(|x| {
                let px = self.project(self.caption, x);
                pool.iter().map(|py| super::cosine(&px, py)).collect()
            })
            .collect()
    }
}

/// Trains both projections with the hinge over uniformly sampled unrelated
/// items. Returns the model and the per-epoch loss.
pub fn train_ranking(
    captions: &[Vec<f64>],
    items: &[Vec<f64>],
    config: &RankingConfig,
) -> Result<(RankingModel, Vec<f64>)> {
    let n = captions.len();
    if n != items.len() {
        return Err(dim_err("train_ranking", "items", n, items.len()));
    }
    if n < 2 {
        return Err(Error::Protocol("need at least two items to sample an unrelated pair".into()));
    }
    let (dc, di) = (captions[0].len(), items[0].len());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ParamSet::new();
    let mut init = |rows: usize| -> Result<Tensor<f64>> {
        let v = (0..rows * config.shared_dim)
            .map(|_| rng.random_range(-config.init_range..=config.init_range))
            .collect();
        Tensor::new(vec![rows, config.shared_dim], v)
    };
    let caption = params.add("rank.caption", init(dc)?);
    let item = params.add("rank.item", init(di)?);
    let xc = Tensor::from_rows(captions)?;
    let xi = Tensor::from_rows(items)?;
    let mut adam = Adam::new(&params, config.learning_rate, 0.9, 0.999, 1e-8);
    let mut losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let mut anchors = Vec::with_capacity(n * config.negatives);
        let mut others = Vec::with_capacity(n * config.negatives);
        for a in 0..n {
            for _ in 0..config.negatives {
                let mut m = rng.random_range(0..n - 1);
                if m >= a {
                    m += 1;
                }
                anchors.push(a);
                others.push(m);
            }
        }
        let (loss, grads) = {
            let mut tape = Tape::with_params(&params);
            let c = tape.constant(xc.clone());
            let i = tape.constant(xi.clone());
            let wc = tape.param(caption);
            let wi = tape.param(item);
            let pc = tape.matmul(c, wc)?;
            let pc = tape.normalize_rows(pc)?;
            let pi = tape.matmul(i, wi)?;
            let pi = tape.normalize_rows(pi)?;
            let pos = tape.mul(pc, pi)?;
            let pos = tape.row_sum(pos);
            let pos = tape.gather_rows(pos, &anchors)?;
            let qa = tape.gather_rows(pc, &anchors)?;
            let qm = tape.gather_rows(pi, &others)?;
            let neg = tape.mul(qa, qm)?;
            let neg = tape.row_sum(neg);
            let diff = tape.sub(neg, pos)?;
            let shifted = tape.add_scalar(diff, config.alpha);
            let hinge = tape.relu(shifted);
            let loss = tape.mean(hinge);
            (tape.scalar(loss), tape.backward(loss))
        };
        params.zero_grad();
        params.accumulate(&grads);
        adam.update(&mut params)?;
        losses.push(loss);
    }
    Ok((RankingModel { params, caption, item }, losses))
}

/// 1-based rank of `truth` when the pool is sorted by score descending, ties by index.
pub fn rank_of(scores: &[f64], truth: usize) -> Result<usize> {
    let t = *scores
        .get(truth)
        .ok_or_else(|| Error::Protocol(format!("ground truth {truth} is not in a pool of {}", scores.len())))?;
    let ahead = scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| s > t || (s == t && j < truth))
        .count();
    Ok(ahead + 1)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankReport {
    pub recall_at_1: f64,
    pub recall_at_5: f64,
    pub recall_at_10: f64,
    pub median_rank: f64,
    pub queries: usize,
}

fn median(sorted: &[usize]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
    }
}

/// Recall@{1,5,10} and median rank for one score row per query.
pub fn rank_eval(scores: &[Vec<f64>], truth: &[usize]) -> Result<RankReport> {
    if scores.len() != truth.len() {
        return Err(dim_err("rank_eval", "queries", scores.len(), truth.len()));
    }
    if scores.is_empty() {
        return Err(Error::Protocol("no queries".into()));
    }
    let mut ranks = scores
        .iter()
        .zip(truth)
        .map(|(s, &t)| rank_of(s, t))
        .collect::<Result<Vec<_>>>()?;
    let n = ranks.len() as f64;
    let recall = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
    let (r1, r5, r10) = (recall(1), recall(5), recall(10));
    ranks.sort_unstable();
    Ok(RankReport {
        recall_at_1: r1,
        recall_at_5: r5,
        recall_at_10: r10,
        median_rank: median(&ranks),
        queries: ranks.len(),
    })
}

/// Ranks by fully sorting each pool.
pub fn brute_force_ranks(scores: &[Vec<f64>], truth: &[usize]) -> Vec<usize> {
    scores
        .iter()
        .zip(truth)
        .map(|(s, &t)| {
            let mut order: Vec<usize> = (0..s.len()).collect();
            order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
            order.iter().position(|&j| j == t).expect("truth in pool") + 1
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn hinge_values() {
        assert_eq!(ranking_loss(&[1.0], &[0.0], 0.1).unwrap(), 0.0);
        assert!((ranking_loss(&[0.0], &[0.0], 0.1).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(RANKING_MARGIN, 0.1);
    }

    #[test]
    fn perfect_pool() {
        let scores: Vec<Vec<f64>> = (0..20)
            .map(|q| (0..20).map(|j| if j == q { 1.0 } else { 0.5 }).collect())
            .collect();
        let truth: Vec<usize> = (0..20).collect();
        let r = rank_eval(&scores, &truth).unwrap();
        assert_eq!((r.recall_at_1, r.median_rank), (1.0, 1.0));
    }

    #[test]
    fn missing_truth_is_protocol_error() {
        assert!(matches!(rank_eval(&[vec![0.1, 0.2]], &[2]), Err(Error::Protocol(_))));
    }

    #[test]
    fn random_scores_median_near_middle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let scores: Vec<Vec<f64>> = (0..2000).map(|_| (0..100).map(|_| rng.random()).collect()).collect();
        let truth: Vec<usize> = (0..2000).map(|_| rng.random_range(0..100)).collect();
        let r = rank_eval(&scores, &truth).unwrap();
        assert!((r.median_rank - 50.5).abs() <= 10.0, "{}", r.median_rank);
    }

    #[test]
    fn too_few_items() {
        let one = vec![vec![1.0, 0.0]];
        assert!(matches!(
            train_ranking(&one, &one, &RankingConfig::default()),
            Err(Error::Protocol(_))
        ));
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            pools in prop::collection::vec(prop::collection::vec(0u8..6, 12), 1..30),
            truth_seed in any::<u64>(),
        ) {
            // Few distinct values force many ties.
            let scores: Vec<Vec<f64>> = pools.iter().map(|p| p.iter().map(|&v| f64::from(v)).collect()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(truth_seed);
            let truth: Vec<usize> = scores.iter().map(|_| rng.random_range(0..12)).collect();
            let fast: Vec<usize> = scores.iter().zip(&truth).map(|(s, &t)| rank_of(s, t).unwrap()).collect();
            prop_assert_eq!(&fast, &brute_force_ranks(&scores, &truth));
            let r = rank_eval(&scores, &truth).unwrap();
            prop_assert!(r.recall_at_1 <= r.recall_at_5 && r.recall_at_5 <= r.recall_at_10);
        }
    }
}
