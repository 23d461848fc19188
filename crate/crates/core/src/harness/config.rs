use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{DEFAULT_BACKGROUND_ROWS, DEFAULT_D_MAX, DEFAULT_MAX_ITERS};
use crate::error::{Error, Result};
use crate::graph::{AttentionKind, ModelConfig, TrainConfig};
use crate::schema::{load_dataset, Dataset, FeatureSchema};
use crate::synth::{desk_scenario, generate_dataset, staged_scenario, GroundTruthModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Gatv2,
    DotProduct,
    Logistic,
}

impl Algorithm {
    pub fn attention(self) -> Option<AttentionKind> {
        match self {
            Algorithm::Gatv2 => Some(AttentionKind::Gatv2),
            Algorithm::DotProduct => Some(AttentionKind::DotProduct),
            Algorithm::Logistic => None,
        }
    }

    pub fn is_graph(self) -> bool {
        self.attention().is_some()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Gatv2 => "gatv2",
            Algorithm::DotProduct => "dot_product",
            Algorithm::Logistic => "logistic",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where records come from. Exactly one of `scenario`, `ground_truth` and
/// `dataset` must be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Built-in synthetic scenario: `desk` or `staged`.
    pub scenario: Option<String>,
    /// Ground-truth model JSON file.
    pub ground_truth: Option<PathBuf>,
    /// CSV dataset, read with `schema`.
    pub dataset: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    /// Records generated per seed for synthetic sources.
    pub n: usize,
    pub test_fraction: f64,
    pub val_fraction: f64,
    /// Monte-Carlo sample count for the Bayes-AUROC oracle (synthetic only).
    pub oracle_samples: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            scenario: None,
            ground_truth: None,
            dataset: None,
            schema: None,
            n: 20_000,
            test_fraction: 0.2,
            val_fraction: 0.1,
            oracle_samples: 20_000,
        }
    }
}

/// Graph-model hyperparameters; the attention kind comes from the algorithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSettings {
    pub heads: usize,
    pub feature_embedding_dim: usize,
    pub value_dim: usize,
    pub dropout: f64,
    pub leaky_slope: f64,
}

impl Default for GraphSettings {
    fn default() -> Self {
        let m = ModelConfig::default();
        GraphSettings {
            heads: m.heads,
            feature_embedding_dim: m.feature_embedding_dim,
            value_dim: m.value_dim,
            dropout: m.dropout,
            leaky_slope: m.leaky_slope,
        }
    }
}

impl GraphSettings {
    pub fn model_config(&self, attention: AttentionKind) -> ModelConfig {
        ModelConfig {
            attention,
            heads: self.heads,
            feature_embedding_dim: self.feature_embedding_dim,
            value_dim: self.value_dim,
            dropout: self.dropout,
            leaky_slope: self.leaky_slope,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogisticConfig {
    pub l2_lambda: f64,
    pub max_iters: usize,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            l2_lambda: 1e-4,
            max_iters: DEFAULT_MAX_ITERS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttributionConfig {
    /// Training rows sampled as the Shapley background.
    pub background_rows: usize,
    /// Leading test records explained with Shapley values; graph importances
    /// are compared with them on the same records.
    pub shapley_records: usize,
    /// Above this many features, exact enumeration gives way to sampling.
    pub exact_d_max: usize,
    pub coalitions: usize,
    /// Test records explained by graph models (all when absent).
    pub explain_records: Option<usize>,
}

impl Default for AttributionConfig {
    fn default() -> Self {
        AttributionConfig {
            background_rows: DEFAULT_BACKGROUND_ROWS,
            shapley_records: 100,
            exact_d_max: DEFAULT_D_MAX,
            coalitions: 2048,
            explain_records: None,
        }
    }
}

/// Experiment grid description, read from TOML.
///
/// Top-level keys: `name`, `out_dir`, `model_ids`, `algorithms`, `seeds`.
/// Tables: `[data]` ([`DataConfig`]), `[model]` ([`GraphSettings`]),
/// `[training]` ([`TrainConfig`], with `[training.adam]`), `[logistic]`
/// ([`LogisticConfig`]) and `[attribution]` ([`AttributionConfig`]).
/// Unknown keys are rejected. Relative paths resolve against the config
/// file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    pub model_ids: Vec<u8>,
    pub algorithms: Vec<Algorithm>,
    pub seeds: Vec<u64>,
    pub data: DataConfig,
    #[serde(default)]
    pub model: GraphSettings,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub logistic: LogisticConfig,
    #[serde(default)]
    pub attribution: AttributionConfig,
}

fn default_name() -> String {
    "experiment".to_string()
}

/// Records plus, for synthetic sources, the model that generated them.
pub struct LoadedData {
    pub dataset: Dataset,
    pub ground_truth: Option<GroundTruthModel>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file, resolving relative paths against
    /// its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.data.ground_truth,
            &mut cfg.data.dataset,
            &mut cfg.data.schema,
            &mut cfg.out_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.model_ids.is_empty() || self.algorithms.is_empty() || self.seeds.is_empty() {
            return bad("model_ids, algorithms and seeds must all be nonempty".into());
        }
        if let Some(m) = self.model_ids.iter().find(|m| !(1..=4).contains(*m)) {
            return bad(format!("model_ids: {m} is not in 1..=4"));
        }
        for (what, dup) in [
            ("model_ids", has_duplicates(&self.model_ids)),
            ("algorithms", has_duplicates(&self.algorithms)),
            ("seeds", has_duplicates(&self.seeds)),
        ] {
            if dup {
                return bad(format!("{what} contains duplicates"));
            }
        }
        let d = &self.data;
        let sources = [d.scenario.is_some(), d.ground_truth.is_some(), d.dataset.is_some()];
        if sources.iter().filter(|&&s| s).count() != 1 {
            return bad("data: set exactly one of `scenario`, `ground_truth`, `dataset`".into());
        }
        if let Some(s) = &d.scenario {
            if builtin_scenario(s).is_none() {
                return bad(format!("data.scenario: unknown scenario `{s}` (expected `desk` or `staged`)"));
            }
        }
        if d.dataset.is_some() != d.schema.is_some() {
            return bad("data: `dataset` and `schema` must be given together".into());
        }
        if d.dataset.is_none() && d.n == 0 {
            return bad("data.n must be positive".into());
        }
        if !(d.test_fraction > 0.0 && d.test_fraction < 1.0) {
            return bad(format!("data.test_fraction {} not in (0,1)", d.test_fraction));
        }
        if !(d.val_fraction > 0.0 && d.val_fraction < 1.0) {
            return bad(format!(
                "data.val_fraction {} not in (0,1); a validation split is needed for early stopping and thresholds",
                d.val_fraction
            ));
        }
        if d.oracle_samples < 1000 {
            return bad("data.oracle_samples must be at least 1000".into());
        }
        self.model
            .model_config(AttentionKind::DotProduct)
            .validate()
            .map_err(|e| Error::Config(format!("model: {e}")))?;
        self.training.validate().map_err(|e| Error::Config(format!("training: {e}")))?;
        if !(self.logistic.l2_lambda >= 0.0 && self.logistic.l2_lambda.is_finite()) {
            return bad("logistic.l2_lambda must be finite and >= 0".into());
        }
        let a = &self.attribution;
        if a.background_rows == 0 || a.shapley_records == 0 {
            return bad("attribution.background_rows and shapley_records must be positive".into());
        }
        if a.explain_records == Some(0) {
            return bad("attribution.explain_records must be positive when set".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, independent of TOML formatting.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn ground_truth(&self) -> Result<Option<GroundTruthModel>> {
        if let Some(s) = &self.data.scenario {
            return Ok(builtin_scenario(s));
        }
        match &self.data.ground_truth {
            Some(p) => Ok(Some(GroundTruthModel::load(p)?)),
            None => Ok(None),
        }
    }

    /// Records for one seed: freshly generated for synthetic sources, read
    /// from disk otherwise.
    pub fn load_data(&self, seed: u64) -> Result<LoadedData> {
        if let Some(gt) = self.ground_truth()? {
            let dataset = generate_dataset(&gt, self.data.n, seed)?;
            return Ok(LoadedData {
                dataset,
                ground_truth: Some(gt),
            });
        }
        let (path, schema) = match (&self.data.dataset, &self.data.schema) {
            (Some(p), Some(s)) => (p, s),
            _ => return Err(Error::Config("data: no source configured".into())),
        };
        let schema = FeatureSchema::load(schema)?;
        Ok(LoadedData {
            dataset: load_dataset(path, &schema)?,
            ground_truth: None,
        })
    }
}

pub fn builtin_scenario(name: &str) -> Option<GroundTruthModel> {
    match name {
        "desk" => Some(desk_scenario()),
        "staged" => Some(staged_scenario()),
        _ => None,
    }
}

fn has_duplicates<T: PartialEq>(xs: &[T]) -> bool {
    xs.iter().enumerate().any(|(i, x)| xs[..i].contains(x))
}
