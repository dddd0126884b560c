use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapper::{GeneratorShape, Relaxation, Variational};

/// Variational family used for the mapping weights.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistributionKind {
    #[default]
    SpikeSlab,
    Gaussian,
    /// Gaussian plus an L1 penalty on the pre-softmax weights.
    GaussianL1,
}

impl DistributionKind {
    pub fn variational(self) -> Variational {
        match self {
            DistributionKind::SpikeSlab => Variational::SpikeSlab,
            DistributionKind::Gaussian | DistributionKind::GaussianL1 => Variational::Gaussian,
        }
    }
}

impl std::fmt::Display for DistributionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DistributionKind::SpikeSlab => "spike_slab",
            DistributionKind::Gaussian => "gaussian",
            DistributionKind::GaussianL1 => "gaussian_l1",
        })
    }
}

impl std::str::FromStr for DistributionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spike_slab" => Ok(DistributionKind::SpikeSlab),
            "gaussian" => Ok(DistributionKind::Gaussian),
            "gaussian_l1" => Ok(DistributionKind::GaussianL1),
            other => Err(Error::InvalidArgument(format!("unknown distribution {other:?}"))),
        }
    }
}

/// Reconstruction term: Euclidean distance or its square.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MseKind {
    #[default]
    Norm,
    Squared,
}

/// Everything that defines the per-user loss.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub variational: Variational,
    pub relaxation: Relaxation,
    pub temperature: f64,
    pub beta: f64,
    pub prior_pi0: f64,
    /// Weight of the L1 penalty on pre-softmax weights.
    pub l1: f64,
    pub mse: MseKind,
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec {
            variational: Variational::SpikeSlab,
            relaxation: Relaxation::StraightThrough,
            temperature: 0.5,
            beta: 1e-10,
            prior_pi0: 1e-4,
            l1: 0.0,
            mse: MseKind::Norm,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub beta: f64,
    pub lr_grid: Vec<f64>,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub temperature: f64,
    pub prior_pi0: f64,
    pub warm_proportion: f64,
    pub distribution: DistributionKind,
    pub l1: f64,
    pub mse: MseKind,
    /// Straight-through gates during training; soft gates otherwise.
    pub hard: bool,
    /// Training draws k uniformly from `1..=max_shots` per user and epoch.
    pub max_shots: usize,
    /// Negatives per validation positive.
    pub val_negatives: usize,
    pub heads: usize,
    pub attn_width: usize,
    pub hidden: usize,
    /// Cap on validation users per epoch; 0 keeps all.
    pub val_users: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            beta: 1e-10,
            lr_grid: vec![0.1, 0.01, 0.001, 0.0001],
            weight_decay: 1e-5,
            max_epochs: 50,
            patience: 3,
            batch_size: 32,
            temperature: 0.5,
            prior_pi0: 1e-4,
            warm_proportion: 1.0,
            distribution: DistributionKind::SpikeSlab,
            l1: 0.0,
            mse: MseKind::Norm,
            hard: true,
            max_shots: 3,
            val_negatives: 100,
            heads: 4,
            attn_width: 64,
            hidden: 128,
            val_users: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.beta >= 0.0) {
            return bad("beta must be nonnegative");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if !(self.warm_proportion > 0.0 && self.warm_proportion <= 1.0) {
            return bad("warm_proportion must lie in (0, 1]");
        }
        if self.lr_grid.is_empty() || self.lr_grid.iter().any(|&lr| !(lr > 0.0)) {
            return bad("lr_grid must hold positive learning rates");
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.max_shots == 0 {
            return bad("batch_size, max_epochs and max_shots must be positive");
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be positive");
        }
        if !(self.prior_pi0 > 0.0 && self.prior_pi0 < 1.0) {
            return bad("prior_pi0 must lie in (0, 1)");
        }
        if !(self.l1 >= 0.0) {
            return bad("l1 must be nonnegative");
        }
        Ok(())
    }

    pub fn loss_spec(&self) -> LossSpec {
        LossSpec {
            variational: self.distribution.variational(),
            relaxation: Relaxation::from_hard(self.hard),
            temperature: self.temperature,
            beta: self.beta,
            prior_pi0: self.prior_pi0,
            l1: if self.distribution == DistributionKind::GaussianL1 {
                self.l1
            } else {
                0.0
            },
            mse: self.mse,
        }
    }

    pub fn shape(&self, dim: usize) -> GeneratorShape {
        GeneratorShape {
            dim,
            heads: self.heads,
            attn_width: self.attn_width,
            hidden: self.hidden,
        }
    }
}
