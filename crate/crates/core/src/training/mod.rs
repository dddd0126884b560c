//! Variational objective for the generator and the loop that fits it on
//! warm users with frozen base-model embeddings as targets.

mod config;
mod kl;
mod objective;
mod trainer;

pub use config::{DistributionKind, LossSpec, MseKind, TrainConfig};
pub use kl::{kl_bernoulli, kl_gaussian};
pub use objective::{reconstruction_error, vib_loss, UserExample, VibLoss, VibObjective};
pub use trainer::{
    ablate_distribution, default_l1_grid, train_mapper, EarlyStopping, EpochLog, RunSummary, TrainOutcome,
};
