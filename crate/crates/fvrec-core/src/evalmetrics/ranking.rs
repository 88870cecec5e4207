//! NDCG@k and top-k list construction.

use crate::error::{Error, Result};

/// Ordered top-k recommendations for one user, best first. Fold-in items are
/// excluded before ranking.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecommendationList {
    pub user: usize,
    pub items: Vec<u32>,
}

/// 1-based rank discount shared by NDCG and the group aggregation.
#[inline]
pub fn rank_discount(rank: usize) -> f64 {
    1.0 / ((rank as f64) + 1.0).log2()
}

/// Top-k item indices by score, fold-in items masked out, ties broken by
/// ascending item index. `foldin` must be sorted.
pub fn top_k_from_scores(scores: &[f64], foldin: &[u32], k: usize) -> Vec<u32> {
    let mut idx: Vec<u32> = (0..scores.len() as u32)
        .filter(|i| foldin.binary_search(i).is_err())
        .collect();
    let kk = k.min(idx.len());
    idx.sort_by(|&a, &b| {
        scores[b as usize]
            .partial_cmp(&scores[a as usize])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(kk);
    idx
}

/// NDCG@k with unit gains: DCG over holdout hits discounted by
/// 1/log2(rank+1), normalized by the ideal DCG for min(|holdout|, k) hits.
/// `holdout` must be sorted and non-empty.
pub fn ndcg_at_k(recommended: &[u32], holdout: &[u32], k: usize) -> Result<f64> {
    if holdout.is_empty() {
        return Err(Error::Metric("ndcg with empty holdout".into()));
    }
    let mut dcg = 0.0;
    for (i, item) in recommended.iter().take(k).enumerate() {
        if holdout.binary_search(item).is_ok() {
            dcg += rank_discount(i + 1);
        }
    }
    let ideal: f64 = (1..=holdout.len().min(k)).map(rank_discount).sum();
    Ok(dcg / ideal)
}
