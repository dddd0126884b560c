use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use super::metrics::{mrr_from_rank, ndcg_from_rank, rank_of_positive, CUTOFF};
use crate::datastore::{kshot_view, negative_pool, sample_from_pool, DatasetSplit, EmbeddingTable};
use crate::error::{Error, Result};
use crate::numerics::Rng;

/// One held-out positive and its sampled negatives.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateList {
    pub positive: u64,
    pub negatives: Vec<u64>,
}

/// A cold user's observed prefix and the lists their prediction is ranked on.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserCase {
    pub user: u64,
    pub initial: Vec<u64>,
    pub lists: Vec<CandidateList>,
}

/// Candidate lists for every user in `users` with at least `k + 1` items.
///
/// Negatives come from a stream keyed by `(user, positive)`, so the same
/// positive meets the same negatives at every `k` and for every method.
pub fn build_cases(split: &DatasetSplit, users: &[u64], k: usize, n_neg: usize, rng: &Rng) -> Result<Vec<UserCase>> {
    let mut out = Vec::new();
    for &user in users {
        let seq = split.sequence(user).ok_or(Error::UnknownUser(user))?;
        if seq.len() < k + 1 {
            continue;
        }
        let view = kshot_view(split, user, k)?;
        let pool = negative_pool(split, user)?;
        let lists = view
            .holdout
            .iter()
            .map(|&positive| {
                let mut r = rng.substream(&[user, positive]);
                CandidateList {
                    positive,
                    negatives: sample_from_pool(&mut r, &pool, n_neg).items,
                }
            })
            .collect();
        out.push(UserCase {
            user,
            initial: view.initial,
            lists,
        });
    }
    Ok(out)
}

/// Per-user NDCG and MRR at the cutoff, averaged over the user's lists.
pub fn score_case(case: &UserCase, embedding: ArrayView1<'_, f32>, items: &EmbeddingTable) -> Result<(f64, f64)> {
    if case.lists.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "user {} has no held-out items",
            case.user
        )));
    }
    let score = |id: u64| -> Result<(u64, f32)> {
        let row = items.get(id).ok_or(Error::UnknownItem(id))?;
        Ok((id, row.dot(&embedding)))
    };
    let (mut ndcg, mut mrr) = (0.0, 0.0);
    for list in &case.lists {
        let pos = score(list.positive)?;
        let negs = list.negatives.iter().map(|&id| score(id)).collect::<Result<Vec<_>>>()?;
        let rank = rank_of_positive(pos, negs);
        ndcg += ndcg_from_rank(rank, CUTOFF);
        mrr += mrr_from_rank(rank, CUTOFF);
    }
    let n = case.lists.len() as f64;
    Ok((ndcg / n, mrr / n))
}
