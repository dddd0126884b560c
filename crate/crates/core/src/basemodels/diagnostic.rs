use std::collections::BTreeMap;

use super::BaseModel;
use crate::datastore::DatasetSplit;

/// Mean in-cluster pairwise distance of warm embeddings, per shot count.
///
/// For `s` in `0..=max_shots`, warm users are grouped by their first `s` items
/// (`s = 0` is one global cluster; users with fewer than `s` items are left
/// out). Over all clusters with at least two members, the Euclidean distance
/// of every member pair is averaged. `None` marks a shot count with no such
/// cluster.
pub fn cluster_distance_diagnostic(model: &BaseModel, split: &DatasetSplit, max_shots: usize) -> Vec<Option<f64>> {
    (0..=max_shots)
        .map(|s| {
            let mut clusters: BTreeMap<&[u64], Vec<usize>> = BTreeMap::new();
            for &u in split.warm_users() {
                let seq = split.sequence(u).expect("warm user");
                let Some(pos) = model.users.position(u) else {
                    continue;
                };
                if seq.len() >= s {
                    clusters.entry(&seq[..s]).or_default().push(pos);
                }
            }
            let mut total = 0.0f64;
            let mut pairs = 0u64;
            for members in clusters.values().filter(|m| m.len() >= 2) {
                for (a, &i) in members.iter().enumerate() {
                    let ei = model.users.row(i);
                    for &j in &members[a + 1..] {
                        let d: f64 = ei
                            .iter()
                            .zip(model.users.row(j).iter())
                            .map(|(x, y)| ((x - y) as f64).powi(2))
                            .sum();
                        total += d.sqrt();
                        pairs += 1;
                    }
                }
            }
            (pairs > 0).then(|| total / pairs as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basemodels::BaseKind;
    use crate::datastore::{temporal_user_split, EmbeddingTable, Interaction, InteractionLog, SplitRatios};
    use ndarray::Array2;

    fn setup(first_item: impl Fn(u64) -> u64) -> (BaseModel, DatasetSplit) {
        let mut recs = Vec::new();
        for u in 0..20u64 {
            recs.push(Interaction {
                user: u,
                item: first_item(u),
                timestamp: u as i64,
            });
            recs.push(Interaction {
                user: u,
                item: 50 + u % 3,
                timestamp: 100 + u as i64,
            });
        }
        let split = temporal_user_split(&InteractionLog::from_records(recs), SplitRatios::default()).unwrap();
        let warm = split.warm_users().to_vec();
        let users = Array2::from_shape_fn((warm.len(), 2), |(r, c)| ((r * 7 + c * 3) % 5) as f32);
        let items: Vec<u64> = split.train_items().iter().copied().collect();
        let item_emb = Array2::zeros((items.len(), 2));
        let model = BaseModel::new(
            BaseKind::Bpr,
            EmbeddingTable::new(warm, users).unwrap(),
            EmbeddingTable::new(items, item_emb).unwrap(),
            0,
            0,
        )
        .unwrap();
        (model, split)
    }

    fn brute_global(model: &BaseModel) -> f64 {
        let m = model.users.matrix();
        let (mut t, mut n) = (0.0, 0);
        for i in 0..m.nrows() {
            for j in 0..m.nrows() {
                if i < j {
                    t += (&m.row(i) - &m.row(j)).mapv(|v| (v as f64).powi(2)).sum().sqrt();
                    n += 1;
                }
            }
        }
        t / n as f64
    }

    #[test]
    fn zero_shots_is_global_mean() {
        let (model, split) = setup(|u| u % 4);
        let d = cluster_distance_diagnostic(&model, &split, 2);
        assert!((d[0].unwrap() - brute_global(&model)).abs() < 1e-9);
    }

    #[test]
    fn shared_first_item_gives_same_value() {
        let (model, split) = setup(|_| 7);
        let d = cluster_distance_diagnostic(&model, &split, 1);
        assert!((d[0].unwrap() - d[1].unwrap()).abs() < 1e-12);
    }

    #[test]
    fn all_singletons_report_absent() {
        let (model, split) = setup(|u| if u < 16 { 1000 + u } else { 1000 });
        let d = cluster_distance_diagnostic(&model, &split, 2);
        assert!(d[0].is_some());
        assert_eq!(d[1], None);
    }
}
