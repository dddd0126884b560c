//! Pre-trained dot-product recommenders whose embeddings stay frozen downstream.

mod diagnostic;
mod graph;
mod trainer;

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use crate::datastore::{load_embeddings, save_embeddings, EmbeddingTable};
use crate::error::{Error, Result};

pub use diagnostic::cluster_distance_diagnostic;
pub use graph::NormalizedGraph;
pub use trainer::{train_bpr, train_lightgcn, training_auc, BprConfig, EpochRecord, TrainHistory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseKind {
    Bpr,
    #[serde(rename = "lightgcn")]
    LightGcn,
}

impl fmt::Display for BaseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaseKind::Bpr => "bpr",
            BaseKind::LightGcn => "lightgcn",
        })
    }
}

impl FromStr for BaseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bpr" => Ok(BaseKind::Bpr),
            "lightgcn" => Ok(BaseKind::LightGcn),
            other => Err(Error::InvalidArgument(format!("unknown base model {other:?}"))),
        }
    }
}

/// Frozen user and item tables of a trained recommender.
///
/// Scoring is a plain dot product, so a predicted cold-user embedding can be
/// dropped in wherever a stored warm embedding is used.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseModel {
    pub kind: BaseKind,
    pub users: EmbeddingTable,
    pub items: EmbeddingTable,
    pub seed: u64,
    pub epochs: usize,
}

impl BaseModel {
    pub fn new(kind: BaseKind, users: EmbeddingTable, items: EmbeddingTable, seed: u64, epochs: usize) -> Result<Self> {
        if users.dim() != items.dim() {
            return Err(Error::Shape(format!(
                "user dim {} != item dim {}",
                users.dim(),
                items.dim()
            )));
        }
        users.validate()?;
        items.validate()?;
        Ok(BaseModel {
            kind,
            users,
            items,
            seed,
            epochs,
        })
    }

    pub fn dim(&self) -> usize {
        self.users.dim()
    }

    /// Writes `users.vmeb`, `items.vmeb` and `meta.txt` under `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_embeddings(&self.users, dir.join("users.vmeb"))?;
        save_embeddings(&self.items, dir.join("items.vmeb"))?;
        let meta = format!(
            "kind={}\ndim={}\nseed={}\nepochs={}\n",
            self.kind,
            self.dim(),
            self.seed,
            self.epochs
        );
        let path = dir.join("meta.txt");
        fs::write(&path, meta).map_err(|e| Error::io(path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("meta.txt");
        let meta = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let field = |key: &str| -> Result<&str> {
            meta.lines()
                .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
                .ok_or_else(|| Error::Parse {
                    path: path.clone(),
                    line: 0,
                    message: format!("missing {key}"),
                })
        };
        let bad = |key: &str| Error::Parse {
            path: path.clone(),
            line: 0,
            message: format!("bad {key}"),
        };
        let kind = field("kind")?.parse()?;
        let seed = field("seed")?.parse().map_err(|_| bad("seed"))?;
        let epochs = field("epochs")?.parse().map_err(|_| bad("epochs"))?;
        let users = load_embeddings(dir.join("users.vmeb"))?;
        let items = load_embeddings(dir.join("items.vmeb"))?;
        BaseModel::new(kind, users, items, seed, epochs)
    }
}

/// Ranking score of `item` for a user represented by `user_embedding`.
pub fn score(model: &BaseModel, user_embedding: ArrayView1<'_, f32>, item: u64) -> Result<f32> {
    let v = model.items.get(item).ok_or(Error::UnknownItem(item))?;
    if v.len() != user_embedding.len() {
        return Err(Error::Shape(format!(
            "user embedding has {} dims, items have {}",
            user_embedding.len(),
            v.len()
        )));
    }
    Ok(user_embedding.dot(&v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};

    fn model() -> BaseModel {
        let users = EmbeddingTable::new(vec![1], array![[0.5, 1.0]]).unwrap();
        let items = EmbeddingTable::new(vec![10, 20, 30], array![[1.0, 2.0], [-1.0, 0.5], [3.0, 0.0]]).unwrap();
        BaseModel::new(BaseKind::Bpr, users, items, 0, 1).unwrap()
    }

    #[test]
    fn zero_user_scores_zero() {
        let m = model();
        let z = Array1::zeros(2);
        for item in [10, 20, 30] {
            assert_eq!(score(&m, z.view(), item).unwrap(), 0.0);
        }
    }

    #[test]
    fn self_score_is_squared_norm() {
        let m = model();
        let v = m.items.get(10).unwrap().to_owned();
        assert_eq!(score(&m, v.view(), 10).unwrap(), 5.0);
    }

    #[test]
    fn unknown_item_and_bilinearity() {
        let m = model();
        let u = array![0.3f32, -0.7];
        assert!(matches!(score(&m, u.view(), 99), Err(Error::UnknownItem(99))));
        let s = score(&m, u.view(), 20).unwrap();
        let scaled = u.mapv(|x| x * 2.0);
        assert!((score(&m, scaled.view(), 20).unwrap() - 2.0 * s).abs() < 1e-6);
    }

    #[test]
    fn candidate_order_does_not_change_scores() {
        let m = model();
        let u = array![0.3f32, -0.7];
        let a: Vec<f32> = [10, 20, 30].iter().map(|&i| score(&m, u.view(), i).unwrap()).collect();
        let b: Vec<f32> = [30, 10, 20].iter().map(|&i| score(&m, u.view(), i).unwrap()).collect();
        assert_eq!(a, vec![b[1], b[2], b[0]]);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = model();
        m.save(dir.path()).unwrap();
        assert_eq!(BaseModel::load(dir.path()).unwrap(), m);
    }
}
