//! One function per pipeline stage. Each reads its inputs through the run
//! manifests of the stages before it and finishes by writing its own.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use vmrec::basemodels::{cluster_distance_diagnostic, train_bpr, train_lightgcn, BaseKind, BaseModel};
use vmrec::datastore::{
    load_embeddings, load_interactions, read_blocks, save_embeddings, temporal_user_split, write_blocks, DatasetSplit,
};
use vmrec::evaluation::{
    evaluate_users, format_table, partition_easy_hard, EvalReport, Predictor, RandomPredictor, RuleKind, RulePredictor,
    VmRecPredictor,
};
use vmrec::mapper::{GeneratorParams, InferenceMode, Mapper, Variational};
use vmrec::numerics::Rng;
use vmrec::training::{ablate_distribution, train_mapper, DistributionKind, RunSummary, TrainConfig, TrainOutcome};

use crate::artifacts::{require_stage, write_json, write_manifest, write_text, Layout, SplitManifest};
use crate::config::{digest, Method, RunConfig, Subset};

const BASE_STREAM: u64 = 1;
const MAPPER_STREAM: u64 = 2;
const EVAL_STREAM: u64 = 3;

const SPLIT_FILE: &str = "split.json";
const GENERATOR_FILE: &str = "generator.vmpg";
const WARM_FILE: &str = "warm.vmeb";
const MAPPER_SUMMARY: &str = "summary.json";

fn layout(cfg: &RunConfig) -> Layout {
    Layout::new(&cfg.run.out)
}

fn root_rng(cfg: &RunConfig) -> Rng {
    Rng::new(cfg.seed())
}

/// Rng for all evaluations; shared so that every method meets the same negatives.
pub fn eval_rng(cfg: &RunConfig) -> Rng {
    root_rng(cfg).substream(&[EVAL_STREAM])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub users_total: usize,
    pub warm_users: usize,
    pub val_users: usize,
    pub test_users: usize,
    pub train_items: usize,
    pub dropped_short: usize,
    pub removed_cold_items: usize,
    /// Share of test users whose first k items match some warm user's, per k.
    pub easy_fraction: BTreeMap<usize, f64>,
}

pub fn prepare(cfg: &RunConfig) -> Result<SplitSummary> {
    let path = &cfg.data.path;
    if !path.is_file() {
        bail!("interaction file {} not found or not a file", path.display());
    }
    let log = load_interactions(path, &cfg.data.format())?;
    let split = temporal_user_split(&log, cfg.split.ratios())?;
    let stats = split.stats();
    let summary = SplitSummary {
        users_total: stats.users_total,
        warm_users: split.warm_users().len(),
        val_users: split.val_users().len(),
        test_users: split.test_users().len(),
        train_items: split.train_items().len(),
        dropped_short: stats.dropped_short,
        removed_cold_items: stats.removed_cold_items,
        easy_fraction: cfg
            .eval
            .ks
            .iter()
            .map(|&k| (k, partition_easy_hard(&split, k).easy_fraction()))
            .collect(),
    };
    let dir = layout(cfg).split_dir();
    let manifest = dir.join(SPLIT_FILE);
    let summary_path = dir.join("summary.json");
    write_json(&manifest, &SplitManifest::from_split(&split))?;
    write_json(&summary_path, &summary)?;
    write_manifest(
        &dir,
        "prepare",
        cfg.split_digest(),
        cfg.seed(),
        std::slice::from_ref(path),
        &[manifest, summary_path],
    )?;
    info!(
        "split: {} users, {} warm / {} val / {} test",
        summary.users_total, summary.warm_users, summary.val_users, summary.test_users
    );
    Ok(summary)
}

pub fn load_split(cfg: &RunConfig) -> Result<DatasetSplit> {
    let dir = layout(cfg).split_dir();
    require_stage(&dir, "prepare", &cfg.split_digest())?;
    SplitManifest::read(&dir.join(SPLIT_FILE))?.into_split()
}

pub fn train_base(cfg: &RunConfig) -> Result<BaseModel> {
    let split = load_split(cfg)?;
    let rng = root_rng(cfg).substream(&[BASE_STREAM]);
    let (model, history) = match cfg.base.kind {
        BaseKind::Bpr => train_bpr(&split, &cfg.base.train, &rng)?,
        BaseKind::LightGcn => train_lightgcn(&split, &cfg.base.train, &rng)?,
    };
    let dir = layout(cfg).base_dir(cfg.base.kind);
    model.save(&dir)?;
    write_json(&dir.join("history.json"), &history)?;
    let outputs: Vec<PathBuf> = ["users.vmeb", "items.vmeb", "meta.txt", "history.json"]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    write_manifest(
        &dir,
        "train-base",
        cfg.base_digest(),
        cfg.seed(),
        &[layout(cfg).split_dir().join(SPLIT_FILE)],
        &outputs,
    )?;
    info!(
        "{} base model: {} users x {} items, dim {}, {} epochs",
        cfg.base.kind,
        model.users.len(),
        model.items.len(),
        model.dim(),
        history.epochs.len()
    );
    Ok(model)
}

pub fn load_base(cfg: &RunConfig) -> Result<BaseModel> {
    let dir = layout(cfg).base_dir(cfg.base.kind);
    require_stage(&dir, "train-base", &cfg.base_digest())?;
    Ok(BaseModel::load(&dir)?)
}

/// What `train-mapper` records next to the checkpoint.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MapperSummary {
    pub distribution: DistributionKind,
    pub variational: Variational,
    pub best_lr: f64,
    pub best_val_ndcg5: f64,
    pub mean_pi_at_best: f64,
    pub initial_val_ndcg5: f64,
    pub warm_users: usize,
    pub runs: Vec<RunSummary>,
}

#[derive(Deserialize)]
struct MapperInfo {
    variational: Variational,
}

fn save_mapper(dir: &Path, outcome: &TrainOutcome, distribution: DistributionKind) -> Result<Vec<PathBuf>> {
    let generator = dir.join(GENERATOR_FILE);
    let warm = dir.join(WARM_FILE);
    let log = dir.join("train_log.jsonl");
    let summary = dir.join(MAPPER_SUMMARY);
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_blocks(&outcome.params.to_checkpoint(), &generator)?;
    save_embeddings(&outcome.warm, &warm)?;
    write_text(&log, &outcome.log_jsonl())?;
    write_json(
        &summary,
        &MapperSummary {
            distribution,
            variational: outcome.variational,
            best_lr: outcome.best_lr,
            best_val_ndcg5: outcome.best_val_ndcg5,
            mean_pi_at_best: outcome.mean_pi_at_best,
            initial_val_ndcg5: outcome.initial_val_ndcg5,
            warm_users: outcome.warm.len(),
            runs: outcome.runs.clone(),
        },
    )?;
    Ok(vec![generator, warm, log, summary])
}

fn read_mapper(dir: &Path) -> Result<Mapper> {
    let params = GeneratorParams::from_checkpoint(&read_blocks(dir.join(GENERATOR_FILE))?)?;
    let warm = load_embeddings(dir.join(WARM_FILE))?;
    let path = dir.join(MAPPER_SUMMARY);
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let info: MapperInfo = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(Mapper::new(params, info.variational, warm)?)
}

fn base_inputs(cfg: &RunConfig) -> Vec<PathBuf> {
    let l = layout(cfg);
    vec![
        l.split_dir().join(SPLIT_FILE),
        l.base_dir(cfg.base.kind).join("users.vmeb"),
        l.base_dir(cfg.base.kind).join("items.vmeb"),
    ]
}

pub fn train_mapper_cmd(cfg: &RunConfig) -> Result<TrainOutcome> {
    let split = load_split(cfg)?;
    let base = load_base(cfg)?;
    let outcome = train_mapper(&split, &base, &cfg.mapper, &root_rng(cfg).substream(&[MAPPER_STREAM]))?;
    let dir = layout(cfg).mapper_dir(cfg.base.kind);
    let outputs = save_mapper(&dir, &outcome, cfg.mapper.distribution)?;
    write_manifest(
        &dir,
        "train-mapper",
        cfg.mapper_digest(),
        cfg.seed(),
        &base_inputs(cfg),
        &outputs,
    )?;
    info!(
        "mapper: best lr {} val NDCG@5 {:.4} (untrained {:.4}), mean pi {:.3}",
        outcome.best_lr, outcome.best_val_ndcg5, outcome.initial_val_ndcg5, outcome.mean_pi_at_best
    );
    Ok(outcome)
}

pub fn load_mapper(cfg: &RunConfig) -> Result<Mapper> {
    let dir = layout(cfg).mapper_dir(cfg.base.kind);
    require_stage(&dir, "train-mapper", &cfg.mapper_digest())?;
    read_mapper(&dir)
}

/// Test users in `subset` at `k` shots.
pub fn subset_users(split: &DatasetSplit, subset: Subset, k: usize) -> Vec<u64> {
    match subset {
        Subset::All => split.test_users().to_vec(),
        Subset::Easy => partition_easy_hard(split, k).easy_users.into_iter().collect(),
        Subset::Hard => partition_easy_hard(split, k).hard_users.into_iter().collect(),
    }
}

/// Evaluates at every configured k; shot counts without any scorable user are skipped.
#[allow(clippy::too_many_arguments)]
fn evaluate_ks(
    cfg: &RunConfig,
    predictor: &dyn Predictor,
    label: &str,
    base: &BaseModel,
    split: &DatasetSplit,
    subset: Subset,
    config_digest: &str,
) -> Result<Vec<EvalReport>> {
    let rng = eval_rng(cfg);
    let mut reports = Vec::new();
    for &k in &cfg.eval.ks {
        let users = subset_users(split, subset, k);
        match evaluate_users(predictor, base, split, &users, k, cfg.eval.negatives, &rng) {
            Ok(mut r) => {
                r.method = label.to_string();
                r.subset = Some(subset.to_string());
                r.config_digest = Some(config_digest.to_string());
                reports.push(r);
            }
            Err(vmrec::Error::EmptyInput(msg)) => warn!("{label} k={k} {subset}: {msg}"),
            Err(e) => return Err(e.into()),
        }
    }
    Ok(reports)
}

fn write_reports(dir: &Path, reports: &[EvalReport]) -> Result<Vec<PathBuf>> {
    let mut outputs = Vec::new();
    for r in reports {
        let stem = format!("{}.k{}", r.method, r.k);
        let records = dir.join(format!("{stem}.records.jsonl"));
        let summary = dir.join(format!("{stem}.summary.json"));
        write_text(&records, &r.records_jsonl())?;
        write_text(&summary, &(r.summary_json() + "\n"))?;
        outputs.push(records);
        outputs.push(summary);
    }
    let table = dir.join("table.txt");
    write_text(&table, &format_table(reports))?;
    outputs.push(table);
    Ok(outputs)
}

pub fn evaluate_cmd(cfg: &RunConfig) -> Result<Vec<EvalReport>> {
    let split = load_split(cfg)?;
    let base = load_base(cfg)?;
    let method = cfg.eval.method;
    let subset = cfg.eval.subset;
    let mut inputs = base_inputs(cfg);
    let (eval_digest, reports) = match method {
        Method::Vmrec => {
            let mapper = load_mapper(cfg)?;
            inputs.push(layout(cfg).mapper_dir(cfg.base.kind).join(GENERATOR_FILE));
            let mut reports = Vec::new();
            for &mode in &cfg.eval.modes {
                let p = VmRecPredictor {
                    mapper: &mapper,
                    items: &base.items,
                    mode,
                };
                let label = format!("vmrec-{mode}");
                reports.extend(evaluate_ks(cfg, &p, &label, &base, &split, subset, &cfg.eval_digest())?);
            }
            (cfg.eval_digest(), reports)
        }
        other => {
            // Baselines do not depend on the mapper settings.
            let d = digest(&[&cfg.base_digest(), &serde_json::to_string(&cfg.eval)?]);
            let p: Box<dyn Predictor> = match other {
                Method::RmInit => Box::new(RulePredictor {
                    kind: RuleKind::Init,
                    split: &split,
                    base: &base,
                }),
                Method::RmCont => Box::new(RulePredictor {
                    kind: RuleKind::Cont,
                    split: &split,
                    base: &base,
                }),
                _ => Box::new(RandomPredictor { dim: base.dim() }),
            };
            let reports = evaluate_ks(cfg, p.as_ref(), &other.to_string(), &base, &split, subset, &d)?;
            (d, reports)
        }
    };
    if reports.is_empty() {
        bail!("{method} produced no evaluable users on the {subset} subset");
    }
    let dir = layout(cfg).eval_dir(cfg.base.kind, &method.to_string(), &subset.to_string());
    let outputs = write_reports(&dir, &reports)?;
    write_manifest(&dir, "evaluate", eval_digest, cfg.seed(), &inputs, &outputs)?;
    Ok(reports)
}

pub fn ablate_cmd(cfg: &RunConfig) -> Result<Vec<EvalReport>> {
    let kind = cfg.ablate.kind;
    if kind == cfg.mapper.distribution {
        bail!("ablation kind {kind} equals the trained mapper's distribution; pick another with --kind");
    }
    let split = load_split(cfg)?;
    let base = load_base(cfg)?;
    let reference = load_mapper(cfg)?;
    let outcome = ablate_distribution(
        kind,
        &split,
        &base,
        &cfg.mapper,
        &cfg.ablate.l1_grid,
        &root_rng(cfg).substream(&[MAPPER_STREAM]),
    )?;
    let variant = outcome.mapper()?;
    let dir = layout(cfg).ablate_dir(cfg.base.kind, &kind.to_string());
    let mut outputs = save_mapper(&dir, &outcome, kind)?;
    let d = digest(&[&cfg.eval_digest(), &serde_json::to_string(&cfg.ablate)?]);
    let mut reports = Vec::new();
    for &mode in &cfg.eval.modes {
        for (mapper, dist) in [(&reference, cfg.mapper.distribution), (&variant, kind)] {
            let p = VmRecPredictor {
                mapper,
                items: &base.items,
                mode,
            };
            let label = format!("vmrec-{dist}-{mode}");
            reports.extend(evaluate_ks(cfg, &p, &label, &base, &split, Subset::All, &d)?);
        }
    }
    outputs.extend(write_reports(&dir, &reports)?);
    let mut inputs = base_inputs(cfg);
    inputs.push(layout(cfg).mapper_dir(cfg.base.kind).join(GENERATOR_FILE));
    write_manifest(&dir, "ablate", d, cfg.seed(), &inputs, &outputs)?;
    Ok(reports)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, clap::ValueEnum)]
pub enum Sweeps {
    None,
    Beta,
    Proportion,
    #[default]
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    /// Mean in-cluster pairwise distance for 0, 1, ... shots.
    pub mean_distance: Vec<Option<f64>>,
    /// Whether the 1-shot clusters are tighter than the 0-shot population.
    pub one_shot_tighter: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub beta: f64,
    pub proportion: f64,
    pub best_lr: f64,
    pub mean_pi_at_best: f64,
    pub best_val_ndcg5: f64,
    /// Deterministic-mode test NDCG@5 per k.
    pub test_ndcg5: BTreeMap<usize, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseReport {
    pub clusters: ClusterReport,
    pub beta_sweep: Vec<SweepRow>,
    /// Rank correlation between beta and mean pi at the best epoch.
    pub beta_pi_spearman: Option<f64>,
    pub proportion_sweep: Vec<SweepRow>,
}

fn sweep_row(cfg: &RunConfig, mapper_cfg: &TrainConfig, split: &DatasetSplit, base: &BaseModel) -> Result<SweepRow> {
    let outcome = train_mapper(split, base, mapper_cfg, &root_rng(cfg).substream(&[MAPPER_STREAM]))?;
    let mapper = outcome.mapper()?;
    let p = VmRecPredictor {
        mapper: &mapper,
        items: &base.items,
        mode: InferenceMode::Deterministic,
    };
    let reports = evaluate_ks(cfg, &p, "vmrec", base, split, Subset::All, "")?;
    Ok(SweepRow {
        beta: mapper_cfg.beta,
        proportion: mapper_cfg.warm_proportion,
        best_lr: outcome.best_lr,
        mean_pi_at_best: outcome.mean_pi_at_best,
        best_val_ndcg5: outcome.best_val_ndcg5,
        test_ndcg5: reports.iter().map(|r| (r.k, r.ndcg5)).collect(),
    })
}

pub fn diagnose_cmd(cfg: &RunConfig, sweeps: Sweeps) -> Result<DiagnoseReport> {
    let split = load_split(cfg)?;
    let base = load_base(cfg)?;
    let mean_distance = cluster_distance_diagnostic(&base, &split, cfg.diagnose.max_shots);
    let one_shot_tighter = match (mean_distance.first(), mean_distance.get(1)) {
        (Some(Some(zero)), Some(Some(one))) => Some(one < zero),
        _ => None,
    };
    if one_shot_tighter == Some(false) {
        warn!("1-shot clusters are not tighter than the whole warm population: {mean_distance:?}");
    }
    let mut beta_sweep = Vec::new();
    if matches!(sweeps, Sweeps::Beta | Sweeps::All) {
        for &beta in &cfg.diagnose.betas {
            info!("beta sweep: {beta}");
            let mc = TrainConfig {
                beta,
                ..cfg.mapper.clone()
            };
            beta_sweep.push(sweep_row(cfg, &mc, &split, &base)?);
        }
    }
    let mut proportion_sweep = Vec::new();
    if matches!(sweeps, Sweeps::Proportion | Sweeps::All) {
        for &proportion in &cfg.diagnose.proportions {
            info!("proportion sweep: {proportion}");
            let mc = TrainConfig {
                warm_proportion: proportion,
                ..cfg.mapper.clone()
            };
            proportion_sweep.push(sweep_row(cfg, &mc, &split, &base)?);
        }
    }
    let betas: Vec<f64> = beta_sweep.iter().map(|r| r.beta).collect();
    let pis: Vec<f64> = beta_sweep.iter().map(|r| r.mean_pi_at_best).collect();
    let report = DiagnoseReport {
        clusters: ClusterReport {
            mean_distance,
            one_shot_tighter,
        },
        beta_pi_spearman: spearman(&betas, &pis),
        beta_sweep,
        proportion_sweep,
    };
    let dir = layout(cfg).diagnose_dir(cfg.base.kind);
    let path = dir.join("diagnose.json");
    write_json(&path, &report)?;
    let d = digest(&[
        &cfg.mapper_digest(),
        &serde_json::to_string(&cfg.diagnose)?,
        &serde_json::to_string(&cfg.eval)?,
        &format!("{sweeps:?}"),
    ]);
    write_manifest(&dir, "diagnose", d, cfg.seed(), &base_inputs(cfg), &[path])?;
    Ok(report)
}

/// Average ranks, ties sharing the mean of their positions (1-based).
fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &p in &idx[i..=j] {
            out[p] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; `None` for fewer than two points or a constant input.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 || x.iter().chain(y).any(|v| v.is_nan()) {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spearman_known_values() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        // ranks of y: 1, 2.5, 2.5, 4 against 1..4
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[0.0, 5.0, 5.0, 9.0]).unwrap();
        let expected = 4.5 / (5.0f64 * 4.5).sqrt();
        assert!((r - expected).abs() < 1e-12, "{r}");
        assert_eq!(spearman(&[1.0, 2.0], &[3.0, 3.0]), None);
        assert_eq!(spearman(&[1.0], &[3.0]), None);
    }
}
