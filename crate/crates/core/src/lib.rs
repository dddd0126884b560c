//! Cold-start user embeddings by variational mapping onto warm users.
//!
//! A pre-trained dot-product recommender supplies frozen user and item
//! embeddings. For a user who has only a handful of interactions, a parameter
//! generator encodes those interactions, produces a spike-and-slab distribution
//! over the warm users, and the predicted embedding is the masked-softmax
//! weighted sum of the selected warm embeddings.
//!
//! Module map:
//!
//! * [`numerics`]: seeded sampling, small dense helpers, finite-difference checks.
//! * [`datastore`]: interaction logs, temporal cold-start splits, binary formats.
//! * [`basemodels`]: BPR and LightGCN trainers that produce the frozen tables.
//! * [`mapper`]: encoder, distribution heads, reparameterization and mapping.
//! * [`training`]: the VIB objective and the Adam training loop.
//! * [`evaluation`]: k-shot ranking evaluation, baselines and partitions.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basemodels;
pub mod datastore;
pub mod error;
pub mod evaluation;
pub mod mapper;
pub mod numerics;
pub mod training;

pub use error::{Error, Result};
