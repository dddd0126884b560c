use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::graph::NormalizedGraph;
use super::{BaseKind, BaseModel};
use crate::datastore::{DatasetSplit, EmbeddingTable};
use crate::error::{Error, Result};
use crate::numerics::{sigmoid, softplus, Adam, Rng};

const STREAM_INIT: u64 = 1;
const STREAM_HOLDOUT: u64 = 2;
const STREAM_HOLDOUT_NEG: u64 = 3;
const STREAM_EPOCH: u64 = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BprConfig {
    pub dim: usize,
    pub learning_rate: f64,
    /// Maximum number of epochs.
    pub epochs: usize,
    pub batch_size: usize,
    pub negatives_per_positive: usize,
    pub l2_reg: f64,
    /// Epochs without held-out improvement before stopping.
    pub patience: usize,
    /// Share of warm interactions held out for early stopping.
    pub holdout_fraction: f64,
    /// Propagation layers (LightGCN only).
    pub layers: usize,
    pub init_std: f64,
}

impl Default for BprConfig {
    fn default() -> Self {
        BprConfig {
            dim: 64,
            learning_rate: 0.001,
            epochs: 100,
            batch_size: 2048,
            negatives_per_positive: 1,
            l2_reg: 1e-6,
            patience: 10,
            holdout_fraction: 0.05,
            layers: 2,
            init_std: 0.01,
        }
    }
}

impl BprConfig {
    fn check(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidArgument("dim must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if self.batch_size == 0 || self.negatives_per_positive == 0 {
            return Err(Error::InvalidArgument(
                "batch size and negatives per positive must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::InvalidArgument("holdout fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub holdout_loss: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// BPR matrix factorization over the warm users' interactions.
pub fn train_bpr(split: &DatasetSplit, config: &BprConfig, rng: &Rng) -> Result<(BaseModel, TrainHistory)> {
    train_embeddings(split, config, 0, BaseKind::Bpr, rng)
}

/// LightGCN: BPR loss on layer-averaged propagated embeddings.
///
/// The exported tables are the propagated embeddings.
pub fn train_lightgcn(split: &DatasetSplit, config: &BprConfig, rng: &Rng) -> Result<(BaseModel, TrainHistory)> {
    train_embeddings(split, config, config.layers, BaseKind::LightGcn, rng)
}

struct Interactions {
    n_users: usize,
    n_items: usize,
    /// Sorted positive item indices per user (including held-out ones).
    positives: Vec<Vec<usize>>,
    train: Vec<(usize, usize)>,
    holdout: Vec<(usize, usize)>,
}

fn index_interactions(split: &DatasetSplit, holdout_fraction: f64, rng: &Rng) -> Interactions {
    let items: Vec<u64> = split.train_items().iter().copied().collect();
    let item_pos = |id: u64| items.binary_search(&id).expect("warm items are training items");
    let mut positives = Vec::with_capacity(split.warm_users().len());
    let mut pairs = Vec::new();
    for (u, &user) in split.warm_users().iter().enumerate() {
        let set: BTreeSet<usize> = split
            .sequence(user)
            .expect("warm user has a sequence")
            .iter()
            .map(|&i| item_pos(i))
            .collect();
        pairs.extend(set.iter().map(|&i| (u, i)));
        positives.push(set.into_iter().collect::<Vec<_>>());
    }

    let target = (pairs.len() as f64 * holdout_fraction).round() as usize;
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut rng.substream(&[STREAM_HOLDOUT]));
    let mut remaining: Vec<usize> = positives.iter().map(Vec::len).collect();
    let mut is_holdout = vec![false; pairs.len()];
    let mut taken = 0;
    for idx in order {
        if taken == target {
            break;
        }
        let u = pairs[idx].0;
        // every user keeps at least one training positive
        if remaining[u] > 1 {
            remaining[u] -= 1;
            is_holdout[idx] = true;
            taken += 1;
        }
    }
    let (mut train, mut holdout) = (Vec::new(), Vec::new());
    for (idx, p) in pairs.into_iter().enumerate() {
        if is_holdout[idx] {
            holdout.push(p);
        } else {
            train.push(p);
        }
    }
    Interactions {
        n_users: split.warm_users().len(),
        n_items: items.len(),
        positives,
        train,
        holdout,
    }
}

fn sample_negative(rng: &mut Rng, n_items: usize, positives: &[usize]) -> usize {
    loop {
        let j = rng.below(n_items);
        if positives.binary_search(&j).is_err() {
            return j;
        }
    }
}

fn pair_loss(emb: ArrayView2<'_, f32>, n_users: usize, u: usize, i: usize, j: usize) -> f64 {
    let eu = emb.row(u);
    let x = eu.dot(&emb.row(n_users + i)) - eu.dot(&emb.row(n_users + j));
    softplus(-(x as f64))
}

fn train_embeddings(
    split: &DatasetSplit,
    config: &BprConfig,
    layers: usize,
    kind: BaseKind,
    rng: &Rng,
) -> Result<(BaseModel, TrainHistory)> {
    config.check()?;
    let data = index_interactions(split, config.holdout_fraction, rng);
    let (n_users, n_items) = (data.n_users, data.n_items);
    if n_items < 2 {
        return Err(Error::InvalidArgument("need at least two training items".into()));
    }
    let n_nodes = n_users + n_items;
    let dim = config.dim;

    let mut init = rng.substream(&[STREAM_INIT]);
    let mut ego = Array2::from_shape_simple_fn((n_nodes, dim), || (init.gaussian() * config.init_std) as f32);

    let graph = (layers > 0).then(|| NormalizedGraph::new(n_users, n_items, &data.train));
    let propagate = |e: &Array2<f32>| -> Option<Array2<f32>> { graph.as_ref().map(|g| g.layer_mean(e.view(), layers)) };

    let mut neg_rng = rng.substream(&[STREAM_HOLDOUT_NEG]);
    let holdout_triples: Vec<(usize, usize, usize)> = data
        .holdout
        .iter()
        .map(|&(u, i)| (u, i, sample_negative(&mut neg_rng, n_items, &data.positives[u])))
        .collect();
    let holdout_loss = |emb: ArrayView2<'_, f32>| -> Option<f64> {
        if holdout_triples.is_empty() {
            return None;
        }
        let total: f64 = holdout_triples
            .iter()
            .map(|&(u, i, j)| pair_loss(emb, n_users, u, i, j))
            .sum();
        Some(total / holdout_triples.len() as f64)
    };

    let mut adam = Adam::<f32>::new(&[(n_nodes, dim)], config.learning_rate, 0.0);
    let mut history = TrainHistory::default();
    let mut best: Option<(f64, Array2<f32>)> = None;
    let mut since_best = 0;
    let mut train = data.train.clone();
    let l2 = config.l2_reg as f32;

    for epoch in 0..config.epochs {
        let mut epoch_rng = rng.substream(&[STREAM_EPOCH, epoch as u64]);
        train.shuffle(&mut epoch_rng);
        let mut loss_sum = 0.0f64;
        let mut loss_count = 0usize;
        for batch in train.chunks(config.batch_size) {
            let propagated = propagate(&ego);
            let emb = propagated.as_ref().map_or(ego.view(), |p| p.view());
            let mut grad_final = Array2::<f32>::zeros((n_nodes, dim));
            let mut grad_reg = Array2::<f32>::zeros((n_nodes, dim));
            let scale = 1.0 / (batch.len() * config.negatives_per_positive) as f32;
            for &(u, i) in batch {
                for _ in 0..config.negatives_per_positive {
                    let j = sample_negative(&mut epoch_rng, n_items, &data.positives[u]);
                    let (iu, ii, ij) = (u, n_users + i, n_users + j);
                    let x = emb.row(iu).dot(&emb.row(ii)) - emb.row(iu).dot(&emb.row(ij));
                    loss_sum += softplus(-(x as f64));
                    loss_count += 1;
                    let g = -sigmoid(-x) * scale;
                    let diff = &emb.row(ii) - &emb.row(ij);
                    grad_final.row_mut(iu).scaled_add(g, &diff);
                    grad_final.row_mut(ii).scaled_add(g, &emb.row(iu));
                    grad_final.row_mut(ij).scaled_add(-g, &emb.row(iu));
                    for node in [iu, ii, ij] {
                        grad_reg.row_mut(node).scaled_add(l2 * scale, &ego.row(node));
                    }
                }
            }
            let mut grad = match &graph {
                Some(g) => g.layer_mean(grad_final.view(), layers),
                None => grad_final,
            };
            grad += &grad_reg;
            adam.step(vec![&mut ego], vec![&grad]);
        }
        let train_loss = loss_sum / loss_count.max(1) as f64;
        if !train_loss.is_finite() || !ego.iter().all(|v| v.is_finite()) {
            return Err(Error::Diverged {
                epoch,
                detail: format!("training loss {train_loss}"),
            });
        }
        let final_emb = propagate(&ego).unwrap_or_else(|| ego.clone());
        let held = holdout_loss(final_emb.view());
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            holdout_loss: held,
        });
        log::debug!("{kind} epoch {epoch}: train {train_loss:.5} holdout {held:?}");

        let monitored = held.unwrap_or(train_loss);
        match &best {
            Some((b, _)) if monitored >= *b => {
                since_best += 1;
            }
            _ => {
                best = Some((monitored, final_emb));
                history.best_epoch = epoch;
                since_best = 0;
            }
        }
        if held.is_some() && since_best >= config.patience {
            break;
        }
    }

    let final_emb = match best {
        Some((_, e)) => e,
        None => propagate(&ego).unwrap_or(ego),
    };
    let user_rows = final_emb.slice_axis(Axis(0), (0..n_users).into()).to_owned();
    let item_rows = final_emb.slice_axis(Axis(0), (n_users..n_nodes).into()).to_owned();
    let users = EmbeddingTable::new(split.warm_users().to_vec(), user_rows)?;
    let items = EmbeddingTable::new(split.train_items().iter().copied().collect(), item_rows)?;
    let model = BaseModel::new(kind, users, items, rng.seed(), history.epochs.len())?;
    Ok((model, history))
}

/// Fraction of sampled (user, positive, negative) triples ranked correctly.
pub fn training_auc(model: &BaseModel, split: &DatasetSplit, rng: &mut Rng, samples: usize) -> f64 {
    let items = model.items.ids();
    let warm = split.warm_users();
    let mut correct = 0usize;
    for _ in 0..samples {
        let user = warm[rng.below(warm.len())];
        let seq = split.sequence(user).expect("warm user");
        let pos = seq[rng.below(seq.len())];
        let neg = loop {
            let j = items[rng.below(items.len())];
            if !seq.contains(&j) {
                break j;
            }
        };
        let u = model.users.get(user).expect("warm user row");
        let sp = u.dot(&model.items.get(pos).expect("train item"));
        let sn = u.dot(&model.items.get(neg).expect("train item"));
        if sp > sn {
            correct += 1;
        }
    }
    correct as f64 / samples as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datastore::{temporal_user_split, Interaction, InteractionLog, SplitRatios};

    #[test]
    fn equal_scores_give_ln2() {
        let emb = Array2::<f32>::zeros((3, 2));
        assert!((pair_loss(emb.view(), 1, 0, 0, 1) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    /// Block-diagonal preferences: even users like items 0..4, odd users like 4..8.
    pub(crate) fn block_split() -> DatasetSplit {
        let mut recs = Vec::new();
        for u in 0..40u64 {
            let base = if u % 2 == 0 { 0 } else { 4 };
            for t in 0..4 {
                recs.push(Interaction {
                    user: u,
                    item: base + t,
                    timestamp: u as i64 * 10 + t as i64,
                });
            }
        }
        temporal_user_split(&InteractionLog::from_records(recs), SplitRatios::default()).unwrap()
    }

    fn block_gap(model: &BaseModel, split: &DatasetSplit) -> (f32, f32) {
        let (mut inb, mut nin, mut cross, mut ncross) = (0.0, 0, 0.0, 0);
        for &u in split.warm_users() {
            let eu = model.users.get(u).unwrap();
            for &i in model.items.ids() {
                let s = eu.dot(&model.items.get(i).unwrap());
                if (u % 2 == 0) == (i < 4) {
                    inb += s;
                    nin += 1;
                } else {
                    cross += s;
                    ncross += 1;
                }
            }
        }
        (inb / nin as f32, cross / ncross as f32)
    }

    fn small_config() -> BprConfig {
        BprConfig {
            dim: 8,
            learning_rate: 0.01,
            epochs: 200,
            batch_size: 16,
            holdout_fraction: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn bpr_separates_blocks() {
        let split = block_split();
        let (model, _) = train_bpr(&split, &small_config(), &Rng::new(5)).unwrap();
        let (inb, cross) = block_gap(&model, &split);
        assert!(inb > cross, "in-block {inb} vs cross {cross}");
        assert_eq!(model.users.len(), split.warm_users().len());
        assert_eq!(model.items.len(), split.train_items().len());
    }

    #[test]
    fn lightgcn_separates_blocks() {
        let split = block_split();
        let (model, _) = train_lightgcn(&split, &small_config(), &Rng::new(5)).unwrap();
        let (inb, cross) = block_gap(&model, &split);
        assert!(inb > cross, "in-block {inb} vs cross {cross}");
        assert_eq!(model.kind, BaseKind::LightGcn);
    }

    #[test]
    fn zero_layer_lightgcn_is_bpr() {
        let split = block_split();
        let cfg = BprConfig {
            epochs: 5,
            layers: 0,
            ..small_config()
        };
        let (a, _) = train_bpr(&split, &cfg, &Rng::new(8)).unwrap();
        let (b, _) = train_lightgcn(&split, &cfg, &Rng::new(8)).unwrap();
        assert_eq!(a.users, b.users);
        assert_eq!(a.items, b.items);
    }

    #[test]
    fn deterministic_given_seed() {
        let split = block_split();
        let cfg = BprConfig {
            epochs: 3,
            ..small_config()
        };
        let (a, _) = train_bpr(&split, &cfg, &Rng::new(1)).unwrap();
        let (b, _) = train_bpr(&split, &cfg, &Rng::new(1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn holdout_keeps_a_training_positive_per_user() {
        let split = block_split();
        let data = index_interactions(&split, 0.5, &Rng::new(3));
        let mut has_train = vec![false; data.n_users];
        for &(u, _) in &data.train {
            has_train[u] = true;
        }
        assert!(has_train.iter().all(|&b| b));
        assert!(!data.holdout.is_empty());
    }

    #[test]
    fn divergence_is_reported() {
        let split = block_split();
        let cfg = BprConfig {
            learning_rate: f64::INFINITY,
            epochs: 2,
            ..small_config()
        };
        assert!(matches!(
            train_bpr(&split, &cfg, &Rng::new(1)),
            Err(Error::Diverged { epoch: 0, .. })
        ));
    }
}
