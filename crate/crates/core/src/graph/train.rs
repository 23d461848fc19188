use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{GraphModel, ModelConfig};
use crate::diff::{adam_step, backward, forward_loss, AdamConfig, LossTarget, Mode, OptimizerState};
use crate::error::{Error, Result};
use crate::metrics::{auroc, ScoredSet};
use crate::schema::{Dataset, Record};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            max_epochs: 50,
            patience: 5,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::arg("batch size and epoch count must be positive"));
        }
        if !(self.adam.lr > 0.0) || !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return Err(Error::arg("invalid Adam hyperparameters"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auroc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation AUROC.
    pub model: GraphModel,
    pub best_epoch: usize,
    pub best_val_auroc: f64,
    pub pos_weight: f64,
    pub history: Vec<EpochRecord>,
}

/// `#negatives / #positives`, rejecting single-class training data.
pub fn positive_weight(labels: &[u8]) -> Result<f64> {
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::arg(format!(
            "training split needs both classes ({pos} positive, {neg} negative)"
        )));
    }
    Ok(neg as f64 / pos as f64)
}

const EVAL_CHUNK: usize = 512;

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64-style finalizer so nearby (epoch, batch) pairs get unrelated streams
    let mut z = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Trains a fresh graph model with weighted cross-entropy and Adam, stopping
/// early on validation AUROC. Identical inputs and seed give bit-identical
/// parameters.
pub fn train(
    train_set: &Dataset,
    val_set: &Dataset,
    model_config: &ModelConfig,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.schema != val_set.schema {
        return Err(Error::SchemaMismatch("training and validation schemas differ".into()));
    }
    let pos_weight = positive_weight(&train_set.labels())?;
    let val_labels = val_set.labels();
    if !val_labels.contains(&0) || !val_labels.contains(&1) {
        return Err(Error::arg("validation split needs both classes for early stopping"));
    }
    let stats = train_set.stats_or_fit();
    let mut model = GraphModel::new(train_set.schema.clone(), stats, model_config.clone(), seed)?;
    let mut opt = OptimizerState::new(&model.params, config.adam);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x5417, 0));

    let mut best = (f64::NEG_INFINITY, 0usize, model.params.clone());
    let mut history = Vec::new();
    let mut stale = 0;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let records: Vec<&Record> = idx.iter().map(|&i| &train_set.records[i]).collect();
            let labels: Vec<f64> = records.iter().map(|r| r.label as f64).collect();
            let batch = model.encode(&records)?;
            let target = LossTarget {
                labels: &labels,
                pos_weight,
            };
            let dropout_seed = mix(seed, epoch as u64, b as u64 + 1);
            let grads = {
                let (loss, mut cache) =
                    forward_loss(&model, &model.params, &batch, target, Mode::Train, dropout_seed)
                        .map_err(|e| annotate(e, epoch, b))?;
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite loss at epoch {epoch}, batch {b}"
                    )));
                }
                loss_sum += loss * idx.len() as f64;
                backward(&mut cache).map_err(|e| annotate(e, epoch, b))?
            };
            adam_step(&mut model.params, &grads, &mut opt).map_err(|e| annotate(e, epoch, b))?;
        }
        let scores = model.predict_many(&val_set.records, EVAL_CHUNK)?;
        let val_auroc = auroc(&ScoredSet::new(scores, val_labels.clone())?)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_auroc,
        });
        if val_auroc > best.0 {
            best = (val_auroc, epoch, model.params.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    let (best_val_auroc, best_epoch, params) = best;
    model.params = params;
    Ok(TrainOutcome {
        model,
        best_epoch,
        best_val_auroc,
        pos_weight,
        history,
    })
}

fn annotate(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}, batch {batch}: {m}")),
        other => other,
    }
}
