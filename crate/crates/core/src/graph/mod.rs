//! Feature-graph attention classifier and its explanations.

mod explain;
mod export;
mod model;
mod train;

pub use explain::{
    aggregate_explanations, interaction_proportion, top_k_edges, top_k_from_matrix, unordered_pairs,
    AggregateExplanation, Edge, Explanation, PairImportance,
};
pub use export::{explanation_to_dot, explanation_to_json, NODE_SIZE_SCALE};
pub use model::{
    AttentionKind, EncodedBatch, FeatureGraph, ForwardVars, GraphModel, ModelConfig, CHECKPOINT_FORMAT, HEAD_HIDDEN,
    HIDDEN,
};
pub use train::{positive_weight, train, EpochRecord, TrainConfig, TrainOutcome};
