use std::collections::BTreeSet;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::basemodels::BaseModel;
use crate::datastore::DatasetSplit;

fn mean_of(users: &[u64], base: &BaseModel) -> Option<Array1<f32>> {
    let rows: Vec<_> = users.iter().filter_map(|&u| base.users.get(u)).collect();
    if rows.is_empty() {
        return None;
    }
    let mut acc = Array1::<f32>::zeros(base.dim());
    for r in &rows {
        acc += r;
    }
    Some(acc / rows.len() as f32)
}

/// Warm users whose first `initial.len()` items equal `initial`, in order.
pub fn prefix_matches(initial: &[u64], split: &DatasetSplit) -> Vec<u64> {
    split
        .warm_users()
        .iter()
        .copied()
        .filter(|&u| split.sequence(u).is_some_and(|s| s.starts_with(initial)))
        .collect()
}

/// Warm users whose sequence contains `initial` as a contiguous run.
pub fn contiguous_matches(initial: &[u64], split: &DatasetSplit) -> Vec<u64> {
    split
        .warm_users()
        .iter()
        .copied()
        .filter(|&u| {
            split
                .sequence(u)
                .is_some_and(|s| !initial.is_empty() && s.windows(initial.len()).any(|w| w == initial))
        })
        .collect()
}

/// Mean embedding of warm users sharing the cold user's exact prefix.
pub fn rm_init(initial: &[u64], split: &DatasetSplit, base: &BaseModel) -> Option<Array1<f32>> {
    mean_of(&prefix_matches(initial, split), base)
}

/// Mean embedding of warm users who interacted with the prefix consecutively anywhere.
pub fn rm_cont(initial: &[u64], split: &DatasetSplit, base: &BaseModel) -> Option<Array1<f32>> {
    mean_of(&contiguous_matches(initial, split), base)
}

/// Test users split by whether some warm user starts with the same k items.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetPartition {
    pub k: usize,
    pub easy_users: BTreeSet<u64>,
    pub hard_users: BTreeSet<u64>,
}

impl SubsetPartition {
    pub fn easy_fraction(&self) -> f64 {
        let total = self.easy_users.len() + self.hard_users.len();
        if total == 0 {
            0.0
        } else {
            self.easy_users.len() as f64 / total as f64
        }
    }
}

/// Partitions test users with at least `k + 1` items.
pub fn partition_easy_hard(split: &DatasetSplit, k: usize) -> SubsetPartition {
    let prefixes: BTreeSet<&[u64]> = split
        .warm_users()
        .iter()
        .filter_map(|&u| split.sequence(u))
        .filter(|s| s.len() >= k)
        .map(|s| &s[..k])
        .collect();
    let mut out = SubsetPartition {
        k,
        ..Default::default()
    };
    for &u in split.test_users() {
        let Some(seq) = split.sequence(u) else { continue };
        if seq.len() < k + 1 {
            continue;
        }
        if prefixes.contains(&seq[..k]) {
            out.easy_users.insert(u);
        } else {
            out.hard_users.insert(u);
        }
    }
    out
}
