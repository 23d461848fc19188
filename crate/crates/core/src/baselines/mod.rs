//! Logistic-regression baseline and model-agnostic attributions.

mod logistic;
mod permutation;
mod shapley;

use serde::{Deserialize, Serialize};

pub use logistic::{
    predict_logistic, train_logistic, train_logistic_traced, LogisticModel, DEFAULT_MAX_ITERS, GRAD_TOLERANCE,
};
pub use permutation::{permutation_importance, ImportanceMetric, F1_THRESHOLD};
pub use shapley::{exact_shapley, sampled_shapley, DEFAULT_D_MAX, SAMPLED_D_MAX};

/// Number of training rows drawn as the Shapley background by default.
pub const DEFAULT_BACKGROUND_ROWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributionMethod {
    ExactShapley,
    SampledShapley,
    Permutation,
}

/// One value per schema feature, in schema order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionResult {
    pub feature_names: Vec<String>,
    pub values: Vec<f64>,
    pub method: AttributionMethod,
    pub baseline: String,
}

impl AttributionResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("attribution serializes")
    }
}

#[cfg(test)]
mod tests;
