use std::collections::BTreeSet;

use rand::seq::index;

use super::split::DatasetSplit;
use crate::error::{Error, Result};
use crate::numerics::Rng;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NegativeSample {
    pub items: Vec<u64>,
    /// How many fewer items than requested were available.
    pub shortfall: usize,
}

/// Training items the user never interacted with, ascending.
pub fn negative_pool(split: &DatasetSplit, user: u64) -> Result<Vec<u64>> {
    let seq: BTreeSet<u64> = split
        .sequence(user)
        .ok_or(Error::UnknownUser(user))?
        .iter()
        .copied()
        .collect();
    Ok(split
        .train_items()
        .iter()
        .copied()
        .filter(|i| !seq.contains(i))
        .collect())
}

/// `n` distinct items drawn uniformly without replacement from `pool`.
pub fn sample_from_pool(rng: &mut Rng, pool: &[u64], n: usize) -> NegativeSample {
    if pool.len() <= n {
        return NegativeSample {
            items: pool.to_vec(),
            shortfall: n - pool.len(),
        };
    }
    let items = index::sample(rng, pool.len(), n).into_iter().map(|i| pool[i]).collect();
    NegativeSample { items, shortfall: 0 }
}

/// Evaluation negatives for `user`: training items outside the user's whole history.
pub fn sample_negatives(rng: &mut Rng, user: u64, split: &DatasetSplit, n: usize) -> Result<NegativeSample> {
    let pool = negative_pool(split, user)?;
    let sample = sample_from_pool(rng, &pool, n);
    if sample.shortfall > 0 {
        log::warn!(
            "user {user}: only {} negatives available, {} short",
            pool.len(),
            sample.shortfall
        );
    }
    Ok(sample)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datastore::{temporal_user_split, Interaction, InteractionLog, SplitRatios};

    fn split_with_items(n_items: u64) -> DatasetSplit {
        // warm users cover items 0..n_items; cold users hold items 0 and 1
        let mut recs = Vec::new();
        for u in 0..16u64 {
            for i in 0..n_items {
                recs.push(Interaction {
                    user: u,
                    item: i,
                    timestamp: u as i64,
                });
            }
        }
        for u in 16..20u64 {
            recs.push(Interaction {
                user: u,
                item: 0,
                timestamp: 100 + u as i64,
            });
            recs.push(Interaction {
                user: u,
                item: 1,
                timestamp: 200 + u as i64,
            });
        }
        temporal_user_split(&InteractionLog::from_records(recs), SplitRatios::default()).unwrap()
    }

    #[test]
    fn exact_pool_returns_everything() {
        let split = split_with_items(102);
        let s = sample_negatives(&mut Rng::new(1), 19, &split, 100).unwrap();
        assert_eq!(s.shortfall, 0);
        let mut items = s.items.clone();
        items.sort();
        assert_eq!(items, (2..102).collect::<Vec<_>>());
    }

    #[test]
    fn never_returns_history_items_and_is_deterministic() {
        let split = split_with_items(400);
        let a = sample_negatives(&mut Rng::new(9).substream(&[19]), 19, &split, 100).unwrap();
        let b = sample_negatives(&mut Rng::new(9).substream(&[19]), 19, &split, 100).unwrap();
        assert_eq!(a, b);
        let distinct: BTreeSet<u64> = a.items.iter().copied().collect();
        assert_eq!(distinct.len(), 100);
        assert!(!a.items.contains(&0) && !a.items.contains(&1));
    }

    #[test]
    fn small_pool_records_shortfall() {
        let split = split_with_items(50);
        let s = sample_negatives(&mut Rng::new(1), 19, &split, 100).unwrap();
        assert_eq!(s.items.len(), 48);
        assert_eq!(s.shortfall, 52);
    }
}
