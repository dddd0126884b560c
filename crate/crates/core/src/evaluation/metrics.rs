use crate::error::{Error, Result};

/// Default ranking cutoff.
pub const CUTOFF: usize = 5;

fn rank_in(ranked_items: &[u64], relevant: u64) -> Result<usize> {
    ranked_items
        .iter()
        .position(|&i| i == relevant)
        .map(|p| p + 1)
        .ok_or_else(|| Error::InvalidArgument(format!("relevant item {relevant} not among candidates")))
}

/// NDCG@k for a list with a single relevant item, given its 1-based rank.
pub fn ndcg_from_rank(rank: usize, k: usize) -> f64 {
    if rank >= 1 && rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    }
}

/// MRR@k for a list with a single relevant item, given its 1-based rank.
pub fn mrr_from_rank(rank: usize, k: usize) -> f64 {
    if rank >= 1 && rank <= k {
        1.0 / rank as f64
    } else {
        0.0
    }
}

pub fn ndcg_at_k(ranked_items: &[u64], relevant: u64, k: usize) -> Result<f64> {
    Ok(ndcg_from_rank(rank_in(ranked_items, relevant)?, k))
}

pub fn mrr_at_k(ranked_items: &[u64], relevant: u64, k: usize) -> Result<f64> {
    Ok(mrr_from_rank(rank_in(ranked_items, relevant)?, k))
}

/// 1-based rank of `positive` when candidates are sorted by descending score,
/// ties going to the smaller item id.
pub fn rank_of_positive(positive: (u64, f32), negatives: impl IntoIterator<Item = (u64, f32)>) -> usize {
    let (pid, ps) = positive;
    1 + negatives
        .into_iter()
        .filter(|&(id, s)| s > ps || (s == ps && id < pid))
        .count()
}

/// Orders `(item, score)` pairs best first with the same tie rule.
pub fn rank_items(scored: &mut [(u64, f32)]) {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
}

/// Expected NDCG@k when the positive lands uniformly among `candidates` slots.
pub fn uniform_rank_ndcg(candidates: usize, k: usize) -> f64 {
    (1..=k.min(candidates)).map(|r| ndcg_from_rank(r, k)).sum::<f64>() / candidates as f64
}
