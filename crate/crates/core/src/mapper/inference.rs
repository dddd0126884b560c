use ndarray::Array1;
use serde::{Deserialize, Serialize};

use super::distribution::{distribution_forward, SpikeSlabParams, WarmContext};
use super::encoder::encode;
use super::params::GeneratorParams;
use super::weights::{map_embedding, masked_softmax_or_fallback, MapperWeights, MaskMode};
use crate::basemodels::BaseModel;
use crate::datastore::EmbeddingTable;
use crate::error::{Error, Result};
use crate::numerics::{Real, Rng};

/// Form of the variational distribution over mapping weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variational {
    /// Bernoulli gate times Gaussian slab.
    #[default]
    SpikeSlab,
    /// Gaussian weights on every warm row, no gate.
    Gaussian,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    /// One exact draw from the learned distribution.
    Stochastic,
    /// Gate on when `pi > 0.5`, weight value `mu`.
    #[default]
    Deterministic,
}

impl std::fmt::Display for InferenceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InferenceMode::Stochastic => "stochastic",
            InferenceMode::Deterministic => "deterministic",
        })
    }
}

impl std::str::FromStr for InferenceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stochastic" => Ok(InferenceMode::Stochastic),
            "deterministic" => Ok(InferenceMode::Deterministic),
            other => Err(Error::InvalidArgument(format!("unknown inference mode {other:?}"))),
        }
    }
}

/// Pre-mask weights drawn (or read off) for inference.
pub fn inference_weights<F: Real>(
    dist: &SpikeSlabParams<F>,
    variational: Variational,
    mode: InferenceMode,
    rng: &mut Rng,
) -> Array1<F> {
    let half = F::of(0.5);
    (0..dist.len())
        .map(|i| {
            let on = match (variational, mode) {
                (Variational::Gaussian, _) => true,
                (Variational::SpikeSlab, InferenceMode::Deterministic) => dist.pi[i] > half,
                (Variational::SpikeSlab, InferenceMode::Stochastic) => rng.uniform_open() < dist.pi[i].as_f64(),
            };
            let value = match mode {
                InferenceMode::Deterministic => dist.mu[i],
                InferenceMode::Stochastic => dist.mu[i] + F::of(rng.gaussian()) * dist.sigma[i],
            };
            if on {
                value
            } else {
                F::zero()
            }
        })
        .collect()
}

/// Result of mapping one cold user.
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub embedding: Array1<f32>,
    pub weights: MapperWeights<f32>,
    /// The empty-support repair was used.
    pub fallback: bool,
    /// Average gate probability over the warm rows.
    pub mean_pi: f64,
}

/// Per-user diagnostic record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MappingDiagnostic {
    pub user_id: u64,
    pub support_size: usize,
    pub top_weights: Vec<(u64, f64)>,
    pub mode: String,
}

impl Inference {
    pub fn diagnostic(&self, user_id: u64, warm_ids: &[u64], mode: InferenceMode, top: usize) -> MappingDiagnostic {
        MappingDiagnostic {
            user_id,
            support_size: self.weights.support_size(),
            top_weights: self
                .weights
                .top(top)
                .into_iter()
                .map(|(i, w)| (warm_ids[i], w as f64))
                .collect(),
            mode: mode.to_string(),
        }
    }
}

/// Trained generator bound to its warm table, ready to map cold users.
///
/// The warm-side share of the first-stage layers is computed once here.
pub struct Mapper {
    params: GeneratorParams<f32>,
    variational: Variational,
    warm: EmbeddingTable,
    ctx: WarmContext<f32>,
}

impl Mapper {
    pub fn new(params: GeneratorParams<f32>, variational: Variational, warm: EmbeddingTable) -> Result<Self> {
        params.shape.check()?;
        if warm.dim() != params.shape.dim {
            return Err(Error::Shape(format!(
                "warm dim {} does not match generator dim {}",
                warm.dim(),
                params.shape.dim
            )));
        }
        if warm.is_empty() {
            return Err(Error::InvalidArgument("empty warm table".into()));
        }
        let ctx = WarmContext::new(warm.matrix().to_owned(), &params);
        Ok(Mapper {
            params,
            variational,
            warm,
            ctx,
        })
    }

    pub fn params(&self) -> &GeneratorParams<f32> {
        &self.params
    }

    pub fn variational(&self) -> Variational {
        self.variational
    }

    pub fn warm(&self) -> &EmbeddingTable {
        &self.warm
    }

    pub fn distribution(&self, initial_items: &[u64], items: &EmbeddingTable) -> Result<SpikeSlabParams<f32>> {
        if initial_items.is_empty() {
            return Err(Error::InvalidArgument("no initial interactions".into()));
        }
        let x = items.gather(initial_items)?;
        let (h, _) = encode(x.view(), &self.params.attn, &self.params.shape);
        let (dist, _) = distribution_forward(h.view(), &self.ctx, &self.params);
        dist.check()?;
        Ok(dist)
    }

    pub fn infer(
        &self,
        initial_items: &[u64],
        items: &EmbeddingTable,
        mode: InferenceMode,
        rng: &mut Rng,
    ) -> Result<Inference> {
        let dist = self.distribution(initial_items, items)?;
        let w_tilde = inference_weights(&dist, self.variational, mode, rng);
        let (weights, fallback) = masked_softmax_or_fallback(w_tilde.view(), MaskMode::Infer, dist.pi.view())?;
        let embedding = map_embedding(&weights, self.warm.matrix())?;
        Ok(Inference {
            embedding,
            weights,
            fallback,
            mean_pi: dist.pi.iter().map(|&p| p as f64).sum::<f64>() / dist.len() as f64,
        })
    }
}

/// Maps a cold user through the full warm table of `base`.
pub fn infer_embedding(
    initial_items: &[u64],
    base: &BaseModel,
    params: &GeneratorParams<f32>,
    mode: InferenceMode,
    rng: &mut Rng,
) -> Result<Inference> {
    Mapper::new(params.clone(), Variational::SpikeSlab, base.users.clone())?.infer(
        initial_items,
        &base.items,
        mode,
        rng,
    )
}

/// Uniform random subset of the warm table at `proportion`, original order kept.
pub fn warm_subset(table: &EmbeddingTable, proportion: f64, rng: &mut Rng) -> Result<EmbeddingTable> {
    if !(proportion > 0.0 && proportion <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "proportion {proportion} outside (0, 1]"
        )));
    }
    if proportion == 1.0 {
        return Ok(table.clone());
    }
    let keep = ((table.len() as f64 * proportion).round() as usize).clamp(1, table.len());
    let mut positions = rand::seq::index::sample(rng, table.len(), keep).into_vec();
    positions.sort_unstable();
    Ok(table.select(&positions))
}
