use serde::{Deserialize, Serialize};

use super::config::{Algorithm, ExperimentConfig};
use crate::metrics::MetricsReport;

/// Rows kept in every importance and interaction table.
pub const TOP_ROWS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub crate_version: String,
    pub started_at_unix: u64,
    pub finished_at_unix: u64,
}

/// Ground-truth facts for synthetic sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Oracle {
    /// `(model_id, Bayes AUROC using that model's features)`; `None` when
    /// the oracle is undefined, e.g. for a single-class label distribution.
    pub bayes_auroc_by_model: Vec<(u8, Option<f64>)>,
    /// Planted pairs by feature name, strongest first.
    pub planted_interactions: Vec<(String, String)>,
}

/// One `(model_id, algorithm, seed)` grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub model_id: u8,
    pub algorithm: Algorithm,
    pub seed: u64,
    /// Set when the cell failed; all result fields are then empty.
    pub error: Option<String>,
    pub feature_names: Vec<String>,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Test metrics at the threshold chosen on validation.
    pub metrics: Option<MetricsReport>,
    pub best_epoch: Option<usize>,
    pub best_val_auroc: Option<f64>,
    /// Graph models: mean pooling weight over explained test records.
    /// Logistic: mean |Shapley value| over the Shapley records.
    pub importance: Option<Vec<f64>>,
    pub mean_outward_edge: Option<Vec<f64>>,
    /// `[source][destination]` mean interaction importance.
    pub mean_intimp: Option<Vec<Vec<f64>>>,
    /// Spearman correlation between this model's importance on the Shapley
    /// records and the logistic baseline's mean |Shapley| on the same records.
    pub spearman_vs_logistic_shapley: Option<f64>,
    /// 1-based rank of each planted pair among unordered interaction pairs;
    /// `None` for a pair with a feature outside this model's stages.
    pub planted_pair_ranks: Option<Vec<Option<usize>>>,
}

impl CellReport {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub sd: f64,
    pub n: usize,
}

impl MeanSd {
    pub fn of(xs: &[f64]) -> Option<MeanSd> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(MeanSd { mean, sd, n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub auroc: Option<MeanSd>,
    pub auprc: Option<MeanSd>,
    pub accuracy: Option<MeanSd>,
    pub f1: Option<MeanSd>,
    pub sensitivity: Option<MeanSd>,
    pub specificity: Option<MeanSd>,
    pub precision: Option<MeanSd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub feature: String,
    pub importance: f64,
    pub outward_edge: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectedRow {
    pub source: String,
    pub destination: String,
    pub importance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    pub a: String,
    pub b: String,
    pub total: f64,
    pub a_to_b: f64,
    pub b_to_a: f64,
}

/// Aggregate over seeds for one `(model_id, algorithm)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub model_id: u8,
    pub algorithm: Algorithm,
    pub runs: usize,
    pub failures: usize,
    pub metrics: MetricSummary,
    pub top_features: Vec<FeatureRow>,
    pub top_directed_interactions: Vec<DirectedRow>,
    pub top_pair_interactions: Vec<PairRow>,
    pub spearman_vs_logistic_shapley: Option<MeanSd>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub provenance: Provenance,
    pub config: ExperimentConfig,
    pub oracle: Option<Oracle>,
    /// Ordered by `(model_id, algorithm, seed)`.
    pub cells: Vec<CellReport>,
    /// Ordered by `(model_id, algorithm)`.
    pub summaries: Vec<CellSummary>,
}

impl ExperimentReport {
    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| !c.ok()).count()
    }

    pub fn cells_for(&self, model_id: u8, algorithm: Algorithm) -> impl Iterator<Item = &CellReport> {
        self.cells
            .iter()
            .filter(move |c| c.model_id == model_id && c.algorithm == algorithm)
    }

    pub fn summary(&self, model_id: u8, algorithm: Algorithm) -> Option<&CellSummary> {
        self.summaries
            .iter()
            .find(|s| s.model_id == model_id && s.algorithm == algorithm)
    }

    /// Canonical JSON with the timestamps zeroed, for reproducibility checks.
    pub fn to_json_without_timestamps(&self) -> String {
        let mut copy = self.clone();
        copy.provenance.started_at_unix = 0;
        copy.provenance.finished_at_unix = 0;
        serde_json::to_string_pretty(&copy).expect("report serializes")
    }
}
