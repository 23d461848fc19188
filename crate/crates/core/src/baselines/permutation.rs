use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AttributionMethod, AttributionResult};
use crate::error::{Error, Result};
use crate::metrics::{auroc, confusion_metrics, ScoredSet};
use crate::schema::{Dataset, Record};

/// Probability threshold used when permutation importance is measured in F1.
pub const F1_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceMetric {
    Auroc,
    F1,
}

fn evaluate(metric: ImportanceMetric, scores: Vec<f64>, labels: Vec<u8>) -> Result<f64> {
    let set = ScoredSet::new(scores, labels)?;
    match metric {
        ImportanceMetric::Auroc => auroc(&set),
        ImportanceMetric::F1 => Ok(confusion_metrics(&set, F1_THRESHOLD)?.f1),
    }
}

/// Mean metric drop when one feature column is shuffled, per feature.
pub fn permutation_importance<F>(
    score_fn: &F,
    ds: &Dataset,
    metric: ImportanceMetric,
    n_repeats: usize,
    seed: u64,
) -> Result<AttributionResult>
where
    F: Fn(&[Record]) -> Result<Vec<f64>>,
{
    if n_repeats == 0 {
        return Err(Error::arg("n_repeats must be at least 1"));
    }
    let labels = ds.labels();
    if !labels.contains(&0) || !labels.contains(&1) {
        return Err(Error::UndefinedMetric(
            "permutation importance needs both classes".into(),
        ));
    }
    let base = evaluate(metric, score_fn(&ds.records)?, labels.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = ds.schema.len();
    let mut values = Vec::with_capacity(d);
    let mut shuffled = ds.records.clone();
    for j in 0..d {
        let column: Vec<f64> = ds.records.iter().map(|r| r.values[j]).collect();
        let mut drop = 0.0;
        for _ in 0..n_repeats {
            let mut perm = column.clone();
            perm.shuffle(&mut rng);
            for (r, v) in shuffled.iter_mut().zip(&perm) {
                r.values[j] = *v;
            }
            drop += base - evaluate(metric, score_fn(&shuffled)?, labels.clone())?;
        }
        for (r, v) in shuffled.iter_mut().zip(&column) {
            r.values[j] = *v;
        }
        values.push(drop / n_repeats as f64);
    }
    Ok(AttributionResult {
        feature_names: ds.schema.features.iter().map(|f| f.name.clone()).collect(),
        values,
        method: AttributionMethod::Permutation,
        baseline: format!(
            "{} drop over {n_repeats} shuffles on {} records",
            match metric {
                ImportanceMetric::Auroc => "AUROC",
                ImportanceMetric::F1 => "F1",
            },
            ds.len()
        ),
    })
}
