use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::interactions::InteractionLog;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub warm: u32,
    pub val: u32,
    pub test: u32,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            warm: 8,
            val: 1,
            test: 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitStats {
    pub users_total: usize,
    pub warm_before_filter: usize,
    pub val_before_filter: usize,
    pub test_before_filter: usize,
    pub dropped_short: usize,
    pub removed_cold_items: usize,
    pub dropped_after_item_removal: usize,
}

/// Users partitioned by first-interaction time into warm / validation / test.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    warm_users: Vec<u64>,
    val_users: Vec<u64>,
    test_users: Vec<u64>,
    sequences: BTreeMap<u64, Vec<u64>>,
    first_times: BTreeMap<u64, i64>,
    train_items: BTreeSet<u64>,
    stats: SplitStats,
}

impl DatasetSplit {
    /// Warm users in temporal order of first interaction.
    pub fn warm_users(&self) -> &[u64] {
        &self.warm_users
    }

    pub fn val_users(&self) -> &[u64] {
        &self.val_users
    }

    pub fn test_users(&self) -> &[u64] {
        &self.test_users
    }

    pub fn train_items(&self) -> &BTreeSet<u64> {
        &self.train_items
    }

    pub fn sequence(&self, user: u64) -> Option<&[u64]> {
        self.sequences.get(&user).map(Vec::as_slice)
    }

    pub fn sequences(&self) -> &BTreeMap<u64, Vec<u64>> {
        &self.sequences
    }

    pub fn first_time(&self, user: u64) -> Option<i64> {
        self.first_times.get(&user).copied()
    }

    pub fn stats(&self) -> &SplitStats {
        &self.stats
    }

    /// Rebuilds a split from stored user lists and sequences, re-checking invariants.
    pub fn from_parts(
        warm_users: Vec<u64>,
        val_users: Vec<u64>,
        test_users: Vec<u64>,
        sequences: BTreeMap<u64, Vec<u64>>,
        first_times: BTreeMap<u64, i64>,
    ) -> Result<Self> {
        let train_items = warm_users
            .iter()
            .filter_map(|u| sequences.get(u))
            .flatten()
            .copied()
            .collect();
        let split = DatasetSplit {
            warm_users,
            val_users,
            test_users,
            sequences,
            first_times,
            train_items,
            stats: SplitStats::default(),
        };
        split.check()?;
        Ok(split)
    }

    fn check(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (name, users) in [
            ("warm", &self.warm_users),
            ("validation", &self.val_users),
            ("test", &self.test_users),
        ] {
            if users.is_empty() {
                return Err(Error::EmptyInput(format!("{name} user set is empty")));
            }
            for &u in users {
                if !seen.insert(u) {
                    return Err(Error::InvalidArgument(format!("user {u} appears twice")));
                }
                let seq = self.sequences.get(&u).ok_or(Error::UnknownUser(u))?;
                if seq.len() < 2 {
                    return Err(Error::TooFewItems {
                        user: u,
                        len: seq.len(),
                        needed: 2,
                    });
                }
                if name != "warm" {
                    if let Some(&item) = seq.iter().find(|i| !self.train_items.contains(i)) {
                        return Err(Error::InvalidArgument(format!(
                            "{name} user {u} has item {item} outside the training items"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Temporal cold-start split.
///
/// Users are ordered by first interaction time (ties by ascending id) and cut
/// by `ratios` into warm, validation and test. Then users with fewer than two
/// interactions are dropped, items never seen by a warm user are removed from
/// validation/test sequences, and the two-interaction filter is re-applied.
pub fn temporal_user_split(log: &InteractionLog, ratios: SplitRatios) -> Result<DatasetSplit> {
    if log.is_empty() {
        return Err(Error::EmptyInput("interaction log is empty".into()));
    }
    let total_ratio = ratios.warm + ratios.val + ratios.test;
    if total_ratio == 0 {
        return Err(Error::InvalidArgument("split ratios sum to zero".into()));
    }
    let by_user = log.by_user();
    let mut order: Vec<(i64, u64)> = by_user.iter().map(|(&u, seq)| (seq[0].1, u)).collect();
    order.sort();

    let n = order.len();
    let n_warm = n * ratios.warm as usize / total_ratio as usize;
    let n_val = n * ratios.val as usize / total_ratio as usize;
    let (warm, rest) = order.split_at(n_warm);
    let (val, test) = rest.split_at(n_val.min(rest.len()));

    let mut stats = SplitStats {
        users_total: n,
        warm_before_filter: warm.len(),
        val_before_filter: val.len(),
        test_before_filter: test.len(),
        ..Default::default()
    };

    let mut sequences = BTreeMap::new();
    let mut first_times = BTreeMap::new();
    let mut keep = |group: &[(i64, u64)], stats: &mut SplitStats| -> Vec<u64> {
        let mut kept = Vec::new();
        for &(t, u) in group {
            let seq: Vec<u64> = by_user[&u].iter().map(|p| p.0).collect();
            if seq.len() < 2 {
                stats.dropped_short += 1;
                continue;
            }
            sequences.insert(u, seq);
            first_times.insert(u, t);
            kept.push(u);
        }
        kept
    };
    let warm_users = keep(warm, &mut stats);
    let mut val_users = keep(val, &mut stats);
    let mut test_users = keep(test, &mut stats);

    let train_items: BTreeSet<u64> = warm_users.iter().flat_map(|u| sequences[u].iter().copied()).collect();

    for users in [&mut val_users, &mut test_users] {
        users.retain(|u| {
            let seq = sequences.get_mut(u).expect("kept above");
            let before = seq.len();
            seq.retain(|i| train_items.contains(i));
            stats.removed_cold_items += before - seq.len();
            if seq.len() < 2 {
                stats.dropped_after_item_removal += 1;
                sequences.remove(u);
                first_times.remove(u);
                false
            } else {
                true
            }
        });
    }

    let split = DatasetSplit {
        warm_users,
        val_users,
        test_users,
        sequences,
        first_times,
        train_items,
        stats,
    };
    split.check()?;
    Ok(split)
}

/// The first `k` items of a user's sequence and the remainder.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KShotView {
    pub user: u64,
    pub initial: Vec<u64>,
    pub holdout: Vec<u64>,
}

pub fn kshot_view(split: &DatasetSplit, user: u64, k: usize) -> Result<KShotView> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let seq = split.sequence(user).ok_or(Error::UnknownUser(user))?;
    if seq.len() < k + 1 {
        return Err(Error::TooFewItems {
            user,
            len: seq.len(),
            needed: k + 1,
        });
    }
    Ok(KShotView {
        user,
        initial: seq[..k].to_vec(),
        holdout: seq[k..].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datastore::Interaction;

    fn rec(user: u64, item: u64, timestamp: i64) -> Interaction {
        Interaction { user, item, timestamp }
    }

    #[test]
    fn all_single_interaction_users_is_an_error() {
        let log = InteractionLog::from_records((0..10).map(|u| rec(u, 1, u as i64)));
        assert!(temporal_user_split(&log, SplitRatios::default()).is_err());
    }

    #[test]
    fn twenty_users_split_16_2_2() {
        let log = InteractionLog::from_records(
            (0..20u64).flat_map(|u| [rec(u, 100, u as i64 * 10), rec(u, 101, u as i64 * 10 + 1)]),
        );
        let split = temporal_user_split(&log, SplitRatios::default()).unwrap();
        assert_eq!(split.warm_users().len(), 16);
        assert_eq!(split.val_users(), &[16, 17]);
        assert_eq!(split.test_users(), &[18, 19]);
    }

    #[test]
    fn first_time_ties_break_by_user_id() {
        let log = InteractionLog::from_records((0..20u64).rev().flat_map(|u| [rec(u, 1, 0), rec(u, 2, 1)]));
        let split = temporal_user_split(&log, SplitRatios::default()).unwrap();
        assert_eq!(split.warm_users(), (0..16).collect::<Vec<_>>().as_slice());
        assert_eq!(split.test_users(), &[18, 19]);
    }

    type Groups = (Vec<u64>, Vec<u64>, Vec<u64>, BTreeMap<u64, Vec<u64>>);

    /// Naive restatement of the protocol used as an independent check.
    fn oracle(records: &[Interaction]) -> Groups {
        let mut users: Vec<u64> = records.iter().map(|r| r.user).collect();
        users.sort();
        users.dedup();
        let seq_of = |u: u64| {
            let mut rs: Vec<&Interaction> = records.iter().filter(|r| r.user == u).collect();
            rs.sort_by_key(|r| r.timestamp);
            rs.into_iter().map(|r| r.item).collect::<Vec<u64>>()
        };
        let first = |u: u64| {
            records
                .iter()
                .filter(|r| r.user == u)
                .map(|r| r.timestamp)
                .min()
                .unwrap()
        };
        users.sort_by_key(|&u| (first(u), u));
        let n = users.len();
        let (w, v) = (n * 8 / 10, n / 10);
        let warm: Vec<u64> = users[..w].iter().copied().filter(|&u| seq_of(u).len() >= 2).collect();
        let items: BTreeSet<u64> = warm.iter().flat_map(|&u| seq_of(u)).collect();
        let mut seqs = BTreeMap::new();
        for &u in &warm {
            seqs.insert(u, seq_of(u));
        }
        let mut cold = |group: &[u64]| {
            let mut out = vec![];
            for &u in group {
                if seq_of(u).len() < 2 {
                    continue;
                }
                let s: Vec<u64> = seq_of(u).into_iter().filter(|i| items.contains(i)).collect();
                if s.len() >= 2 {
                    seqs.insert(u, s);
                    out.push(u);
                }
            }
            out
        };
        let val = cold(&users[w..w + v]);
        let test = cold(&users[w + v..]);
        (warm, val, test, seqs)
    }

    #[test]
    fn cold_items_removed_and_emptied_user_dropped() {
        let mut records = Vec::new();
        // 16 warm users over items 1..=4
        for u in 0..16u64 {
            records.push(rec(u, 1 + u % 4, u as i64));
            records.push(rec(u, 1 + (u + 1) % 4, u as i64 + 100));
        }
        // val user 16: items 1, 99, 2 -> 99 removed, keeps [1, 2]
        records.extend([rec(16, 1, 20), rec(16, 99, 21), rec(16, 2, 22)]);
        // val user 17: one train item plus two cold items -> dropped
        records.extend([rec(17, 98, 30), rec(17, 3, 31), rec(17, 97, 32)]);
        // test users
        records.extend([rec(18, 4, 40), rec(18, 1, 41)]);
        records.extend([rec(19, 2, 50), rec(19, 96, 51), rec(19, 3, 52), rec(19, 4, 53)]);

        let split =
            temporal_user_split(&InteractionLog::from_records(records.clone()), SplitRatios::default()).unwrap();
        let (warm, val, test, seqs) = oracle(&records);
        assert_eq!(split.warm_users(), warm.as_slice());
        assert_eq!(split.val_users(), val.as_slice());
        assert_eq!(split.test_users(), test.as_slice());
        assert_eq!(split.sequences(), &seqs);

        assert_eq!(split.val_users(), &[16]);
        assert_eq!(split.sequence(16).unwrap(), &[1, 2]);
        assert_eq!(split.sequence(19).unwrap(), &[2, 3, 4]);
        assert!(split.sequence(17).is_none());
        assert_eq!(split.stats().dropped_after_item_removal, 1);
    }

    #[test]
    fn kshot_prefix_and_suffix() {
        let log = InteractionLog::from_records(
            (0..20u64).flat_map(|u| (0..4).map(move |t| rec(u, 10 + t as u64, u as i64 * 10 + t))),
        );
        let split = temporal_user_split(&log, SplitRatios::default()).unwrap();
        let v = kshot_view(&split, 19, 1).unwrap();
        assert_eq!(v.initial, vec![10]);
        assert_eq!(v.holdout, vec![11, 12, 13]);
        let v = kshot_view(&split, 19, 3).unwrap();
        assert_eq!(v.initial, vec![10, 11, 12]);
        assert_eq!(v.holdout, vec![13]);
        assert!(kshot_view(&split, 19, 4).is_err());
        assert!(kshot_view(&split, 19, 0).is_err());
    }

    #[test]
    fn two_items_cannot_support_two_shots() {
        let log = InteractionLog::from_records((0..20u64).flat_map(|u| [rec(u, 1, u as i64), rec(u, 2, u as i64 + 1)]));
        let split = temporal_user_split(&log, SplitRatios::default()).unwrap();
        assert!(matches!(
            kshot_view(&split, 19, 2),
            Err(Error::TooFewItems { len: 2, needed: 3, .. })
        ));
    }
}
