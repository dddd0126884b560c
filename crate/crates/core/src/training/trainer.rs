use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::{DistributionKind, TrainConfig};
use super::objective::{vib_loss, UserExample};
use crate::basemodels::BaseModel;
use crate::datastore::{DatasetSplit, EmbeddingTable};
use crate::error::{Error, Result};
use crate::evaluation::{build_cases, score_case, UserCase};
use crate::mapper::{warm_subset, GeneratorParams, InferenceMode, Mapper, Noise, Variational};
use crate::numerics::{Adam, ParamBlocks, Rng};

const SUBSET_STREAM: u64 = 1;
const INIT_STREAM: u64 = 2;
const EPOCH_STREAM: u64 = 3;
const NOISE_STREAM: u64 = 4;
const VAL_STREAM: u64 = 5;

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss_mse: f64,
    pub loss_kl: f64,
    pub val_ndcg5: f64,
    /// Mean gate probability over validation users.
    pub mean_pi: f64,
    /// Mean mixture support over validation users.
    pub mean_support_size: f64,
    /// Training examples whose support came out empty this epoch.
    pub empty_support_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub lr: f64,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_ndcg5: f64,
    pub mean_pi_at_best: f64,
    pub diverged: Option<String>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: GeneratorParams<f32>,
    pub variational: Variational,
    /// Warm rows the generator mixes; reuse them at inference.
    pub warm: EmbeddingTable,
    pub best_lr: f64,
    pub best_val_ndcg5: f64,
    pub mean_pi_at_best: f64,
    /// Validation NDCG@5 of the initial parameters.
    pub initial_val_ndcg5: f64,
    pub runs: Vec<RunSummary>,
    pub log: Vec<EpochLog>,
}

impl TrainOutcome {
    pub fn log_jsonl(&self) -> String {
        self.log
            .iter()
            .map(|l| serde_json::to_string(l).expect("plain record") + "\n")
            .collect()
    }

    pub fn mapper(&self) -> Result<Mapper> {
        Mapper::new(self.params.clone(), self.variational, self.warm.clone())
    }
}

/// Patience-based stopping on a metric that should increase.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    since: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            best_epoch: 0,
            since: 0,
        }
    }

    /// Records a metric; returns `(improved, stop)`.
    pub fn observe(&mut self, epoch: usize, metric: f64) -> (bool, bool) {
        if self.best.is_none_or(|b| metric > b) {
            self.best = Some(metric);
            self.best_epoch = epoch;
            self.since = 0;
            (true, false)
        } else {
            self.since += 1;
            (false, self.since >= self.patience)
        }
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

struct ValStats {
    ndcg5: f64,
    mean_pi: f64,
    mean_support: f64,
}

fn validate(
    params: &GeneratorParams<f32>,
    variational: Variational,
    warm: &EmbeddingTable,
    items: &EmbeddingTable,
    cases: &[UserCase],
) -> Result<ValStats> {
    let mapper = Mapper::new(params.clone(), variational, warm.clone())?;
    let mut rng = Rng::new(0);
    let (mut ndcg, mut pi, mut support) = (0.0, 0.0, 0.0);
    for case in cases {
        let inf = mapper.infer(&case.initial, items, InferenceMode::Deterministic, &mut rng)?;
        ndcg += score_case(case, inf.embedding.view(), items)?.0;
        pi += inf.mean_pi;
        support += inf.weights.support_size() as f64;
    }
    let n = cases.len() as f64;
    Ok(ValStats {
        ndcg5: ndcg / n,
        mean_pi: pi / n,
        mean_support: support / n,
    })
}

struct Setup<'a> {
    split: &'a DatasetSplit,
    base: &'a BaseModel,
    cfg: &'a TrainConfig,
    warm: EmbeddingTable,
    warm_phi: Array2<f32>,
    val_cases: Vec<UserCase>,
    rng: Rng,
}

struct RunResult {
    summary: RunSummary,
    best_params: GeneratorParams<f32>,
    log: Vec<EpochLog>,
}

fn epoch_batches(setup: &Setup<'_>, epoch: usize) -> Result<Vec<Vec<UserExample<f32>>>> {
    let mut rng = setup.rng.substream(&[EPOCH_STREAM, epoch as u64]);
    let mut order = setup.split.warm_users().to_vec();
    order.shuffle(&mut rng);
    let n = setup.warm.len();
    let mut examples = Vec::with_capacity(order.len());
    for &user in &order {
        let seq = setup.split.sequence(user).ok_or(Error::UnknownUser(user))?;
        let k = (1 + rng.below(setup.cfg.max_shots)).min(seq.len());
        let target = setup.base.users.get(user).ok_or(Error::UnknownUser(user))?.to_owned();
        let mut noise_rng = setup.rng.substream(&[NOISE_STREAM, epoch as u64, user]);
        examples.push(UserExample {
            items: setup.base.items.gather(&seq[..k])?,
            target,
            self_index: setup.warm.position(user),
            noise: Noise::draw(n, &mut noise_rng),
        });
    }
    let mut batches = Vec::new();
    let mut it = examples.into_iter().peekable();
    while it.peek().is_some() {
        batches.push(it.by_ref().take(setup.cfg.batch_size).collect());
    }
    Ok(batches)
}

fn run_one(setup: &Setup<'_>, init: &GeneratorParams<f32>, lr: f64) -> Result<RunResult> {
    let cfg = setup.cfg;
    let spec = cfg.loss_spec();
    let variational = spec.variational;
    let mut params = init.clone();
    let shapes: Vec<_> = params.blocks().iter().map(|b| b.dim()).collect();
    let mut adam = Adam::new(&shapes, lr, cfg.weight_decay);
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best_params = params.clone();
    let mut mean_pi_at_best = f64::NAN;
    let mut log = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        let (mut mse, mut kl, mut empty, mut seen) = (0.0, 0.0, 0usize, 0usize);
        for batch in epoch_batches(setup, epoch)? {
            let out = vib_loss(&params, setup.warm_phi.view(), &batch, &spec, true).map_err(|e| Error::Diverged {
                epoch,
                detail: e.to_string(),
            })?;
            let grads = out.grads.expect("requested gradients");
            if !grads.all_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: "non-finite gradient".into(),
                });
            }
            adam.step(params.blocks_mut(), grads.blocks());
            if !params.all_finite() {
                return Err(Error::Diverged {
                    epoch,
                    detail: "non-finite parameters".into(),
                });
            }
            mse += out.mse * batch.len() as f64;
            kl += out.kl * batch.len() as f64;
            empty += out.fallbacks;
            seen += batch.len();
        }
        let val = validate(&params, variational, &setup.warm, &setup.base.items, &setup.val_cases)?;
        let entry = EpochLog {
            epoch,
            lr,
            loss_mse: mse / seen as f64,
            loss_kl: kl / seen as f64,
            val_ndcg5: val.ndcg5,
            mean_pi: val.mean_pi,
            mean_support_size: val.mean_support,
            empty_support_count: empty,
        };
        log::info!(
            "lr={lr} epoch={epoch} mse={:.5} kl={:.3} val_ndcg5={:.4} mean_pi={:.4} support={:.1}",
            entry.loss_mse,
            entry.loss_kl,
            entry.val_ndcg5,
            entry.mean_pi,
            entry.mean_support_size
        );
        log.push(entry);
        let (improved, stop) = stopper.observe(epoch, val.ndcg5);
        if improved {
            best_params = params.clone();
            mean_pi_at_best = val.mean_pi;
        }
        if stop {
            break;
        }
    }
    Ok(RunResult {
        summary: RunSummary {
            lr,
            epochs: log.len(),
            best_epoch: stopper.best_epoch(),
            best_val_ndcg5: stopper.best().unwrap_or(0.0),
            mean_pi_at_best,
            diverged: None,
        },
        best_params,
        log,
    })
}

/// Fits the generator on warm users, one run per learning rate, and keeps
/// the parameters with the best validation NDCG@5.
pub fn train_mapper(split: &DatasetSplit, base: &BaseModel, cfg: &TrainConfig, rng: &Rng) -> Result<TrainOutcome> {
    cfg.validate()?;
    let warm = warm_subset(&base.users, cfg.warm_proportion, &mut rng.substream(&[SUBSET_STREAM]))?;
    let mut val_users = split.val_users().to_vec();
    if cfg.val_users > 0 {
        val_users.truncate(cfg.val_users);
    }
    let val_cases = build_cases(split, &val_users, 1, cfg.val_negatives, &rng.substream(&[VAL_STREAM]))?;
    if val_cases.is_empty() {
        return Err(Error::EmptyInput("no validation users with two or more items".into()));
    }
    let setup = Setup {
        split,
        base,
        cfg,
        warm_phi: warm.matrix().to_owned(),
        warm,
        val_cases,
        rng: rng.clone(),
    };
    let shape = cfg.shape(base.dim());
    shape.check()?;
    let init = GeneratorParams::<f32>::init(shape, &mut rng.substream(&[INIT_STREAM]));
    let variational = cfg.distribution.variational();
    let initial = validate(&init, variational, &setup.warm, &base.items, &setup.val_cases)?;

    let mut best: Option<RunResult> = None;
    let mut runs = Vec::new();
    let mut log = Vec::new();
    for &lr in &cfg.lr_grid {
        match run_one(&setup, &init, lr) {
            Ok(run) => {
                runs.push(run.summary.clone());
                log.extend(run.log.iter().cloned());
                if best
                    .as_ref()
                    .is_none_or(|b| run.summary.best_val_ndcg5 > b.summary.best_val_ndcg5)
                {
                    best = Some(run);
                }
            }
            Err(Error::Diverged { epoch, detail }) => {
                log::warn!("lr={lr} diverged at epoch {epoch}: {detail}");
                runs.push(RunSummary {
                    lr,
                    epochs: epoch,
                    best_epoch: 0,
                    best_val_ndcg5: f64::NAN,
                    mean_pi_at_best: f64::NAN,
                    diverged: Some(detail),
                });
            }
            Err(e) => return Err(e),
        }
    }
    let best = best.ok_or_else(|| Error::Diverged {
        epoch: 0,
        detail: "every learning rate diverged".into(),
    })?;
    Ok(TrainOutcome {
        params: best.best_params,
        variational,
        warm: setup.warm,
        best_lr: best.summary.lr,
        best_val_ndcg5: best.summary.best_val_ndcg5,
        mean_pi_at_best: best.summary.mean_pi_at_best,
        initial_val_ndcg5: initial.ndcg5,
        runs,
        log,
    })
}

/// Trains the requested distribution family. For the L1 variant every
/// penalty in `l1_grid` is tried and the best validation run kept.
pub fn ablate_distribution(
    kind: DistributionKind,
    split: &DatasetSplit,
    base: &BaseModel,
    cfg: &TrainConfig,
    l1_grid: &[f64],
    rng: &Rng,
) -> Result<TrainOutcome> {
    let mut cfg = cfg.clone();
    cfg.distribution = kind;
    if kind != DistributionKind::GaussianL1 {
        return train_mapper(split, base, &cfg, rng);
    }
    if l1_grid.is_empty() {
        return Err(Error::InvalidArgument("empty l1 grid".into()));
    }
    let mut best: Option<TrainOutcome> = None;
    for &l1 in l1_grid {
        cfg.l1 = l1;
        let out = train_mapper(split, base, &cfg, rng)?;
        if best.as_ref().is_none_or(|b| out.best_val_ndcg5 > b.best_val_ndcg5) {
            best = Some(out);
        }
    }
    Ok(best.expect("nonempty grid"))
}

/// The penalty grid `{1e-20, 1e-19, ..., 1, 10, 100}`.
pub fn default_l1_grid() -> Vec<f64> {
    (-20..=2).map(|e| 10f64.powi(e)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patience_one_stops_after_second_flat_epoch() {
        let mut stop = EarlyStopping::new(1);
        let mut epochs = 0;
        for epoch in 1..=50 {
            epochs += 1;
            let metric = if epoch == 1 { 0.5 } else { 0.4 };
            if stop.observe(epoch, metric).1 {
                break;
            }
        }
        assert_eq!(epochs, 2);
        assert_eq!(stop.best_epoch(), 1);
    }

    #[test]
    fn ties_do_not_count_as_improvement() {
        let mut stop = EarlyStopping::new(3);
        assert_eq!(stop.observe(1, 0.2), (true, false));
        assert_eq!(stop.observe(2, 0.2), (false, false));
        assert_eq!(stop.observe(3, 0.3), (true, false));
        assert_eq!(stop.observe(4, 0.1), (false, false));
        assert_eq!(stop.observe(5, 0.1), (false, false));
        assert_eq!(stop.observe(6, 0.1), (false, true));
        assert_eq!(stop.best(), Some(0.3));
    }

    #[test]
    fn l1_grid_spans_twenty_two_decades() {
        let g = default_l1_grid();
        assert_eq!(g.len(), 23);
        assert_eq!(g[0], 1e-20);
        assert_eq!(g[22], 100.0);
    }
}
