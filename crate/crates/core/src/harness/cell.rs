use serde::{Deserialize, Serialize};

use super::config::{Algorithm, ExperimentConfig};
use super::output::AnyModel;
use crate::baselines::train_logistic;
use crate::error::{Error, Result};
use crate::graph::{train, EpochRecord};
use crate::metrics::{confusion_metrics, optimal_threshold, MetricsReport, ScoredSet};
use crate::schema::{split_dataset, Dataset, FeatureSchema, Record};

/// Train, validation and test splits of the configured source for `seed`,
/// with every feature kept.
pub fn load_split(cfg: &ExperimentConfig, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let data = cfg.load_data(seed)?;
    split_dataset(&data.dataset, cfg.data.test_fraction, cfg.data.val_fraction, seed)
}

/// Keeps the columns of `schema`, in its order. Every feature must exist in
/// `ds` with the same kind and stage.
pub fn project(ds: &Dataset, schema: &FeatureSchema) -> Result<Dataset> {
    let mut idx = Vec::with_capacity(schema.len());
    for f in &schema.features {
        let j = ds
            .schema
            .index_of(&f.name)
            .ok_or_else(|| Error::SchemaMismatch(format!("feature `{}` missing from the data", f.name)))?;
        if ds.schema.features[j] != *f {
            return Err(Error::SchemaMismatch(format!("feature `{}` differs in kind or stage", f.name)));
        }
        idx.push(j);
    }
    let records = ds
        .records
        .iter()
        .map(|r| Record::new(idx.iter().map(|&j| r.values[j]).collect(), r.label))
        .collect();
    Ok(Dataset {
        schema: FeatureSchema {
            label_name: ds.schema.label_name.clone(),
            features: schema.features.clone(),
        },
        records,
        normalization: ds.normalization.as_ref().map(|s| s.restrict(schema)),
    })
}

/// Training summary written next to a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub feature_names: Vec<String>,
    pub n_train: usize,
    pub n_val: usize,
    pub best_epoch: Option<usize>,
    pub best_val_auroc: Option<f64>,
    pub history: Vec<EpochRecord>,
}

/// Trains one model with the config's hyperparameters.
pub fn fit(
    cfg: &ExperimentConfig,
    algorithm: Algorithm,
    train_set: &Dataset,
    val_set: &Dataset,
    seed: u64,
) -> Result<(AnyModel, FitSummary)> {
    let mut summary = FitSummary {
        algorithm,
        seed,
        feature_names: train_set.schema.names().iter().map(|s| s.to_string()).collect(),
        n_train: train_set.len(),
        n_val: val_set.len(),
        best_epoch: None,
        best_val_auroc: None,
        history: Vec::new(),
    };
    let model = match algorithm.attention() {
        Some(kind) => {
            let out = train(train_set, val_set, &cfg.model.model_config(kind), &cfg.training, seed)?;
            summary.best_epoch = Some(out.best_epoch);
            summary.best_val_auroc = Some(out.best_val_auroc);
            summary.history = out.history;
            AnyModel::Graph(Box::new(out.model))
        }
        None => AnyModel::Logistic(Box::new(train_logistic(
            train_set,
            cfg.logistic.l2_lambda,
            cfg.logistic.max_iters,
        )?)),
    };
    Ok((model, summary))
}

/// Test metrics at the threshold that maximizes validation F1.
pub fn evaluate(model: &AnyModel, val: &Dataset, test: &Dataset) -> Result<MetricsReport> {
    let threshold = optimal_threshold(&ScoredSet::new(model.predict_many(&val.records)?, val.labels())?)?;
    confusion_metrics(&ScoredSet::new(model.predict_many(&test.records)?, test.labels())?, threshold)
}
