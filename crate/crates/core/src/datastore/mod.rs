//! Interaction ingestion, temporal cold-start splits and persisted artifacts.

mod binary;
mod checkpoint;
mod embeddings;
mod interactions;
mod negatives;
mod split;

pub use checkpoint::{read_blocks, read_blocks_from, write_blocks, write_blocks_to, NamedBlock};
pub use embeddings::{load_embeddings, save_embeddings, EmbeddingTable};
pub use interactions::{load_interactions, parse_interactions, FormatOptions, Interaction, InteractionLog, LoadStats};
pub use negatives::{negative_pool, sample_from_pool, sample_negatives, NegativeSample};
pub use split::{kshot_view, temporal_user_split, DatasetSplit, KShotView, SplitRatios, SplitStats};
