//! Attention-based feature-graph classification for tabular records.
//!
//! Each record becomes a fully connected directed graph with one node per
//! feature. A single attention layer (GATv2 or scaled dot-product) mixes
//! node embeddings, global attention pooling produces a graph vector and a
//! node-importance distribution, and an MLP head predicts the positive-class
//! probability. The attention and pooling weights give per-record
//! explanations: node importance `beta_i` and interaction importance
//! `alpha_ji * beta_i`, both summing to one.
//!
//! Also included: a logistic-regression baseline, exact and kernel-sampled
//! Shapley values, permutation importance, a metrics suite, a synthetic data
//! generator with planted ground truth, and an incremental feature-stage
//! experiment harness.

pub mod baselines;
pub mod diff;
pub mod error;
pub mod graph;
pub mod harness;
pub mod metrics;
pub mod schema;
pub mod synth;

pub use error::{Error, Result};
pub use schema::{Dataset, FeatureKind, FeatureSchema, FeatureSpec, Record, Stage};
