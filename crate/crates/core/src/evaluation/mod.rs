//! Sampled-negative k-shot evaluation of cold-user embeddings.
//!
//! Each test user reveals their first `k` items; every later item is ranked
//! against sampled negatives by dot product with the predicted embedding.

mod candidates;
mod metrics;
mod predictors;
mod rules;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basemodels::BaseModel;
use crate::datastore::{DatasetSplit, EmbeddingTable};
use crate::error::{Error, Result};
use crate::mapper::{GeneratorParams, InferenceMode, Mapper, Variational};
use crate::numerics::Rng;

pub use candidates::{build_cases, score_case, CandidateList, UserCase};
pub use metrics::{
    mrr_at_k, mrr_from_rank, ndcg_at_k, ndcg_from_rank, rank_items, rank_of_positive, uniform_rank_ndcg, CUTOFF,
};
pub use predictors::{Prediction, Predictor, RandomPredictor, RuleKind, RulePredictor, VmRecPredictor};
pub use rules::{contiguous_matches, partition_easy_hard, prefix_matches, rm_cont, rm_init, SubsetPartition};

/// Default negatives per positive.
pub const NEGATIVES: usize = 100;

const NEGATIVE_STREAM: u64 = 0;
const PREDICT_STREAM: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user: u64,
    pub ndcg5: f64,
    pub mrr5: f64,
    pub positives: usize,
    pub support_size: Option<usize>,
    pub fallback: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub base: String,
    pub k: usize,
    pub subset: Option<String>,
    pub ndcg5: f64,
    pub mrr5: f64,
    pub users: usize,
    /// Eligible users the method declined to predict for.
    pub abstained: usize,
    pub mean_support_size: Option<f64>,
    pub fallbacks: usize,
    pub seed: u64,
    pub config_digest: Option<String>,
    #[serde(skip)]
    pub records: Vec<UserRecord>,
}

impl EvalReport {
    /// One JSON object per user, in evaluation order.
    pub fn records_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("plain record"));
            out.push('\n');
        }
        out
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain report")
    }
}

/// Scores every case; users the predictor abstains on are counted, not scored.
pub fn evaluate_cases(
    predictor: &dyn Predictor,
    items: &EmbeddingTable,
    cases: &[UserCase],
    rng: &Rng,
) -> Result<(Vec<UserRecord>, usize)> {
    let results: Vec<Option<UserRecord>> = cases
        .par_iter()
        .map(|case| {
            let mut r = rng.substream(&[case.user]);
            let Some(pred) = predictor.predict(case.user, &case.initial, &mut r)? else {
                return Ok(None);
            };
            let (ndcg5, mrr5) = score_case(case, pred.embedding.view(), items)?;
            Ok(Some(UserRecord {
                user: case.user,
                ndcg5,
                mrr5,
                positives: case.lists.len(),
                support_size: pred.support_size,
                fallback: pred.fallback,
            }))
        })
        .collect::<Result<_>>()?;
    let abstained = results.iter().filter(|r| r.is_none()).count();
    Ok((results.into_iter().flatten().collect(), abstained))
}

/// Evaluates `predictor` on the given users at `k` shots.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_users(
    predictor: &dyn Predictor,
    base: &BaseModel,
    split: &DatasetSplit,
    users: &[u64],
    k: usize,
    n_neg: usize,
    rng: &Rng,
) -> Result<EvalReport> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let cases = build_cases(split, users, k, n_neg, &rng.substream(&[NEGATIVE_STREAM]))?;
    let (records, abstained) = evaluate_cases(predictor, &base.items, &cases, &rng.substream(&[PREDICT_STREAM]))?;
    if records.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no users evaluated for {} at k={k}",
            predictor.name()
        )));
    }
    let n = records.len() as f64;
    let supports: Vec<f64> = records
        .iter()
        .filter_map(|r| r.support_size.map(|s| s as f64))
        .collect();
    Ok(EvalReport {
        method: predictor.name(),
        base: base.kind.to_string(),
        k,
        subset: None,
        ndcg5: records.iter().map(|r| r.ndcg5).sum::<f64>() / n,
        mrr5: records.iter().map(|r| r.mrr5).sum::<f64>() / n,
        users: records.len(),
        abstained,
        mean_support_size: (!supports.is_empty()).then(|| supports.iter().sum::<f64>() / supports.len() as f64),
        fallbacks: records.iter().filter(|r| r.fallback).count(),
        seed: rng.seed(),
        config_digest: None,
        records,
    })
}

/// Evaluates on all test users.
pub fn evaluate(
    predictor: &dyn Predictor,
    base: &BaseModel,
    split: &DatasetSplit,
    k: usize,
    n_neg: usize,
    rng: &Rng,
) -> Result<EvalReport> {
    evaluate_users(predictor, base, split, split.test_users(), k, n_neg, rng)
}

/// Runs a generator trained on one base model through another's embeddings.
#[allow(clippy::too_many_arguments)]
pub fn cross_model_eval(
    params: &GeneratorParams<f32>,
    variational: Variational,
    target: &BaseModel,
    split: &DatasetSplit,
    k: usize,
    n_neg: usize,
    mode: InferenceMode,
    rng: &Rng,
) -> Result<EvalReport> {
    if params.shape.dim != target.dim() {
        return Err(Error::Shape(format!(
            "generator width {} does not match {} embeddings of width {}",
            params.shape.dim,
            target.kind,
            target.dim()
        )));
    }
    let mapper = Mapper::new(params.clone(), variational, target.users.clone())?;
    let predictor = VmRecPredictor {
        mapper: &mapper,
        items: &target.items,
        mode,
    };
    evaluate(&predictor, target, split, k, n_neg, rng)
}

/// Plain-text table: one row per (method, base, subset), NDCG@5 and MRR@5 per shot.
pub fn format_table(reports: &[EvalReport]) -> String {
    let mut shots: Vec<usize> = reports.iter().map(|r| r.k).collect();
    shots.sort_unstable();
    shots.dedup();
    type Cells = BTreeMap<usize, (f64, f64)>;
    let mut rows: BTreeMap<(String, String, String), Cells> = BTreeMap::new();
    for r in reports {
        rows.entry((
            r.method.clone(),
            r.base.clone(),
            r.subset.clone().unwrap_or_else(|| "all".into()),
        ))
        .or_default()
        .insert(r.k, (r.ndcg5, r.mrr5));
    }
    let w = reports.iter().map(|r| r.method.len()).max().unwrap_or(0).max(12);
    let mut out = format!("{:<w$} {:<9} {:<7}", "method", "base", "subset");
    for k in &shots {
        let _ = write!(out, " | {:>14} {:>8}", format!("{k}-shot NDCG@5"), "MRR@5");
    }
    out.push('\n');
    for ((method, base, subset), cells) in rows {
        let _ = write!(out, "{method:<w$} {base:<9} {subset:<7}");
        for k in &shots {
            match cells.get(k) {
                Some((n, m)) => {
                    let _ = write!(out, " | {n:>14.4} {m:>8.4}");
                }
                None => {
                    let _ = write!(out, " | {:>14} {:>8}", "-", "-");
                }
            }
        }
        out.push('\n');
    }
    out
}
