use ndarray::Array1;

use super::rules::{rm_cont, rm_init};
use crate::basemodels::BaseModel;
use crate::datastore::{DatasetSplit, EmbeddingTable};
use crate::error::Result;
use crate::mapper::{InferenceMode, Mapper};
use crate::numerics::Rng;

/// A predicted cold-user embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub embedding: Array1<f32>,
    /// Number of warm users mixed, when the method mixes warm users.
    pub support_size: Option<usize>,
    pub fallback: bool,
}

impl Prediction {
    pub fn plain(embedding: Array1<f32>) -> Self {
        Prediction {
            embedding,
            support_size: None,
            fallback: false,
        }
    }
}

/// Anything that turns a cold user's first items into an embedding.
///
/// `Ok(None)` means the method abstains for this user.
pub trait Predictor: Sync {
    fn name(&self) -> String;

    fn predict(&self, user: u64, initial: &[u64], rng: &mut Rng) -> Result<Option<Prediction>>;
}

pub struct VmRecPredictor<'a> {
    pub mapper: &'a Mapper,
    pub items: &'a EmbeddingTable,
    pub mode: InferenceMode,
}

impl Predictor for VmRecPredictor<'_> {
    fn name(&self) -> String {
        "vmrec".into()
    }

    fn predict(&self, _user: u64, initial: &[u64], rng: &mut Rng) -> Result<Option<Prediction>> {
        let inf = self.mapper.infer(initial, self.items, self.mode, rng)?;
        Ok(Some(Prediction {
            support_size: Some(inf.weights.support_size()),
            fallback: inf.fallback,
            embedding: inf.embedding,
        }))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RuleKind {
    Init,
    Cont,
}

pub struct RulePredictor<'a> {
    pub kind: RuleKind,
    pub split: &'a DatasetSplit,
    pub base: &'a BaseModel,
}

impl Predictor for RulePredictor<'_> {
    fn name(&self) -> String {
        match self.kind {
            RuleKind::Init => "rm_init".into(),
            RuleKind::Cont => "rm_cont".into(),
        }
    }

    fn predict(&self, _user: u64, initial: &[u64], _rng: &mut Rng) -> Result<Option<Prediction>> {
        let e = match self.kind {
            RuleKind::Init => rm_init(initial, self.split, self.base),
            RuleKind::Cont => rm_cont(initial, self.split, self.base),
        };
        Ok(e.map(Prediction::plain))
    }
}

/// Standard-normal embedding per user; the floor any method should beat.
pub struct RandomPredictor {
    pub dim: usize,
}

impl Predictor for RandomPredictor {
    fn name(&self) -> String {
        "random".into()
    }

    fn predict(&self, _user: u64, _initial: &[u64], rng: &mut Rng) -> Result<Option<Prediction>> {
        Ok(Some(Prediction::plain(
            (0..self.dim).map(|_| rng.gaussian() as f32).collect(),
        )))
    }
}
