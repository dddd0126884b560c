//! Maps a cold user's first few interactions to an embedding in the warm
//! user space.
//!
//! The pipeline: self-attention over the initial item embeddings, a
//! per-warm-user spike-and-slab distribution over mixing weights, a
//! reparameterized draw, a softmax over the surviving weights, and finally a
//! convex combination of warm embeddings.

mod cost;
mod distribution;
mod encoder;
mod inference;
mod params;
mod reparam;
mod weights;

pub use cost::{mapping_cost_probe, CostReport};
pub use distribution::{generate_distribution, SpikeSlabParams, SIGMA_FLOOR};
pub use encoder::{encode_interactions, EncoderOutput};
pub use inference::{
    infer_embedding, inference_weights, warm_subset, Inference, InferenceMode, Mapper, MappingDiagnostic, Variational,
};
pub use params::{Attention, GeneratorParams, GeneratorShape, HeadLayer, ParamGradients, BLOCK_NAMES};
pub use reparam::{reparameterize, reparameterize_with, Noise, Relaxation, Reparameterized};
pub use weights::{map_embedding, masked_softmax, masked_softmax_or_fallback, MapperWeights, MaskMode};

pub(crate) use distribution::{distribution_backward, distribution_forward, WarmContext};
pub(crate) use encoder::{encode, encode_backward};
