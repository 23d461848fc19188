//! Synthetic tabular data with a known generative model.
//!
//! Features are drawn independently (Bernoulli or uniform), the label is
//! Bernoulli(sigmoid(z)) with the multilinear logit
//! `z(x) = bias + sum_j w_j x_j + sum_{j<k} U_jk x_j x_k`. Because the logit is
//! multilinear in independent features, interventional expectations have a
//! closed form and exact Shapley values of `z` can be enumerated.
//!
//! Ground-truth files are JSON:
//!
//! ```json
//! {
//!   "label_name": "isRigidity",
//!   "bias": -0.26,
//!   "features": [
//!     { "name": "AGE", "dist": { "uniform": { "lo": -1.0, "hi": 1.0 } }, "weight": 0.5, "stage": 1 },
//!     { "name": "HTN", "dist": { "bernoulli": { "p": 0.8 } }, "weight": 0.0, "stage": 1 }
//!   ],
//!   "interactions": [ { "j": 0, "k": 1, "weight": 2.0 } ]
//! }
//! ```

use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::sigmoid;
use crate::error::{Error, Result};
use crate::metrics::{auroc, ScoredSet};
use crate::schema::{Dataset, FeatureKind, FeatureSchema, FeatureSpec, Record, Stage};

/// Largest feature count accepted by [`oracle_shapley`].
pub const ORACLE_MAX_FEATURES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureDist {
    Bernoulli { p: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl FeatureDist {
    pub fn mean(&self) -> f64 {
        match *self {
            FeatureDist::Bernoulli { p } => p,
            FeatureDist::Uniform { lo, hi } => (lo + hi) / 2.0,
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            FeatureDist::Bernoulli { p } => f64::from(u8::from(rng.gen::<f64>() < p)),
            FeatureDist::Uniform { lo, hi } => rng.gen_range(lo..hi),
        }
    }

    fn kind(&self) -> FeatureKind {
        match self {
            FeatureDist::Bernoulli { .. } => FeatureKind::Binary,
            FeatureDist::Uniform { .. } => FeatureKind::Continuous,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthFeature {
    pub name: String,
    pub dist: FeatureDist,
    pub weight: f64,
    pub stage: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub j: usize,
    pub k: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel", into = "RawModel")]
pub struct GroundTruthModel {
    pub label_name: String,
    pub bias: f64,
    pub features: Vec<SynthFeature>,
    /// Unordered pairs stored with `j < k`.
    pub interactions: Vec<Interaction>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    label_name: String,
    bias: f64,
    features: Vec<SynthFeature>,
    #[serde(default)]
    interactions: Vec<Interaction>,
}

impl TryFrom<RawModel> for GroundTruthModel {
    type Error = Error;

    fn try_from(raw: RawModel) -> Result<Self> {
        GroundTruthModel::new(raw.label_name, raw.bias, raw.features, raw.interactions)
    }
}

impl From<GroundTruthModel> for RawModel {
    fn from(m: GroundTruthModel) -> Self {
        RawModel {
            label_name: m.label_name,
            bias: m.bias,
            features: m.features,
            interactions: m.interactions,
        }
    }
}

impl GroundTruthModel {
    pub fn new(
        label_name: impl Into<String>,
        bias: f64,
        features: Vec<SynthFeature>,
        interactions: Vec<Interaction>,
    ) -> Result<Self> {
        let d = features.len();
        for f in &features {
            Stage::from_index(f.stage)?;
            match f.dist {
                FeatureDist::Bernoulli { p } if !(p > 0.0 && p < 1.0) => {
                    return Err(Error::Validation(format!(
                        "feature `{}`: Bernoulli p must be in (0,1), got {p}",
                        f.name
                    )))
                }
                FeatureDist::Uniform { lo, hi } if !(lo < hi) => {
                    return Err(Error::Validation(format!(
                        "feature `{}`: uniform needs lo < hi, got [{lo}, {hi}]",
                        f.name
                    )))
                }
                _ => {}
            }
            if !f.weight.is_finite() {
                return Err(Error::Validation(format!("feature `{}`: non-finite weight", f.name)));
            }
        }
        let mut interactions = interactions;
        for it in interactions.iter_mut() {
            if it.j == it.k || it.j >= d || it.k >= d {
                return Err(Error::Validation(format!(
                    "interaction ({}, {}) must reference two distinct features below {d}",
                    it.j, it.k
                )));
            }
            if it.j > it.k {
                std::mem::swap(&mut it.j, &mut it.k);
            }
        }
        let mut pairs: Vec<(usize, usize)> = interactions.iter().map(|i| (i.j, i.k)).collect();
        pairs.sort_unstable();
        if pairs.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Validation("duplicate interaction pair".into()));
        }
        let model = GroundTruthModel {
            label_name: label_name.into(),
            bias,
            features,
            interactions,
        };
        model.schema()?;
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    pub fn schema(&self) -> Result<FeatureSchema> {
        let features = self
            .features
            .iter()
            .map(|f| FeatureSpec::new(f.name.clone(), f.dist.kind(), Stage::from_index(f.stage)?))
            .collect::<Result<Vec<_>>>()?;
        FeatureSchema::new(features, self.label_name.clone())
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        let mut z = self.bias;
        for (f, v) in self.features.iter().zip(x) {
            z += f.weight * v;
        }
        for it in &self.interactions {
            z += it.weight * x[it.j] * x[it.k];
        }
        z
    }

    pub fn means(&self) -> Vec<f64> {
        self.features.iter().map(|f| f.dist.mean()).collect()
    }

    /// `E[z]` under the independent feature distributions.
    pub fn expected_logit(&self) -> f64 {
        self.logit(&self.means())
    }

    /// Pairs with nonzero weight, strongest first; ties by index.
    pub fn interaction_ranking(&self) -> Vec<(usize, usize)> {
        let mut its: Vec<&Interaction> = self.interactions.iter().filter(|i| i.weight != 0.0).collect();
        its.sort_by(|a, b| {
            b.weight
                .abs()
                .total_cmp(&a.weight.abs())
                .then((a.j, a.k).cmp(&(b.j, b.k)))
        });
        its.into_iter().map(|i| (i.j, i.k)).collect()
    }

    pub fn sample_record<R: Rng>(&self, rng: &mut R) -> Record {
        let values: Vec<f64> = self.features.iter().map(|f| f.dist.sample(rng)).collect();
        let p = sigmoid(self.logit(&values));
        let label = u8::from(rng.gen::<f64>() < p);
        Record { values, label }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("ground-truth file {}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("model serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub model: GroundTruthModel,
    pub planted_interaction_ranking: Vec<(usize, usize)>,
    pub bayes_auroc: f64,
}

impl GroundTruth {
    pub fn new(model: GroundTruthModel, n_mc: usize, seed: u64) -> Result<Self> {
        let bayes = bayes_auroc(&model, n_mc, seed)?;
        Ok(GroundTruth {
            planted_interaction_ranking: model.interaction_ranking(),
            bayes_auroc: bayes,
            model,
        })
    }
}

pub fn generate_dataset(gt: &GroundTruthModel, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::arg("n must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..n).map(|_| gt.sample_record(&mut rng)).collect();
    Ok(Dataset {
        schema: gt.schema()?,
        records,
        normalization: None,
    })
}

/// Exact interventional Shapley values of the logit at `x`, with the
/// out-of-coalition features integrated out under their distributions.
pub fn oracle_shapley(gt: &GroundTruthModel, x: &[f64]) -> Result<Vec<f64>> {
    let d = gt.dim();
    if d > ORACLE_MAX_FEATURES {
        return Err(Error::Capability(format!(
            "exact Shapley enumeration supports at most {ORACLE_MAX_FEATURES} features, got {d}; \
             use sampled Shapley instead"
        )));
    }
    if x.len() != d {
        return Err(Error::arg(format!("record has {} values, model has {d}", x.len())));
    }
    let means = gt.means();
    // E[z | x_S] equals z evaluated at x on S and at the means elsewhere,
    // since z is multilinear and features are independent.
    let mut point = vec![0.0; d];
    let values: Vec<f64> = (0..1usize << d)
        .map(|mask| {
            for j in 0..d {
                point[j] = if mask >> j & 1 == 1 { x[j] } else { means[j] };
            }
            gt.logit(&point)
        })
        .collect();
    Ok(shapley_from_coalition_values(d, &values))
}

/// Shapley values from `v(S)` for every coalition, indexed by bitmask.
pub(crate) fn shapley_from_coalition_values(d: usize, values: &[f64]) -> Vec<f64> {
    debug_assert_eq!(values.len(), 1 << d);
    // weight(s) = s! (d - s - 1)! / d!
    let mut weight = vec![0.0; d];
    for (s, w) in weight.iter_mut().enumerate() {
        *w = 1.0 / (d as f64 * binomial(d - 1, s));
    }
    let mut phi = vec![0.0; d];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1usize << i;
        let mut acc = 0.0;
        for mask in 0..values.len() {
            if mask & bit == 0 {
                let s = mask.count_ones() as usize;
                acc += weight[s] * (values[mask | bit] - values[mask]);
            }
        }
        *p = acc;
    }
    phi
}

pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Monte-Carlo AUROC of the true conditional probability as a scorer.
pub fn bayes_auroc(gt: &GroundTruthModel, n_mc: usize, seed: u64) -> Result<f64> {
    if n_mc < 1000 {
        return Err(Error::arg(format!("n_mc must be at least 1000, got {n_mc}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scores = Vec::with_capacity(n_mc);
    let mut labels = Vec::with_capacity(n_mc);
    for _ in 0..n_mc {
        let r = gt.sample_record(&mut rng);
        scores.push(sigmoid(gt.logit(&r.values)));
        labels.push(r.label);
    }
    auroc(&ScoredSet::new(scores, labels)?)
}

/// Monte-Carlo AUROC of `P(y = 1 | x_observed)`, the best achievable by a
/// scorer that sees only the `observed` features. Unobserved features are
/// marginalized with `n_inner` draws shared by every outer sample, so with no
/// observed features every score ties and the result is exactly 0.5.
pub fn bayes_auroc_observed(
    gt: &GroundTruthModel,
    observed: &[usize],
    n_mc: usize,
    n_inner: usize,
    seed: u64,
) -> Result<f64> {
    if n_mc < 1000 || n_inner == 0 {
        return Err(Error::arg(format!(
            "need n_mc >= 1000 and n_inner >= 1, got {n_mc} and {n_inner}"
        )));
    }
    let d = gt.dim();
    let mut seen = vec![false; d];
    for &j in observed {
        if j >= d {
            return Err(Error::arg(format!("feature index {j} out of range for {d} features")));
        }
        seen[j] = true;
    }
    if seen.iter().all(|&s| s) {
        return bayes_auroc(gt, n_mc, seed);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inner: Vec<Vec<f64>> = (0..n_inner).map(|_| gt.sample_record(&mut rng).values).collect();
    let mut scores = Vec::with_capacity(n_mc);
    let mut labels = Vec::with_capacity(n_mc);
    let mut point = vec![0.0; d];
    for _ in 0..n_mc {
        let r = gt.sample_record(&mut rng);
        let mut p = 0.0;
        for z in &inner {
            for j in 0..d {
                point[j] = if seen[j] { r.values[j] } else { z[j] };
            }
            p += sigmoid(gt.logit(&point));
        }
        scores.push(p / n_inner as f64);
        labels.push(r.label);
    }
    auroc(&ScoredSet::new(scores, labels)?)
}

/// [`bayes_auroc_observed`] for the features of incremental model `model_id`.
pub fn bayes_auroc_for_model(gt: &GroundTruthModel, model_id: u8, n_mc: usize, n_inner: usize, seed: u64) -> Result<f64> {
    if !(1..=4).contains(&model_id) {
        return Err(Error::arg(format!("model_id must be in 1..=4, got {model_id}")));
    }
    let observed: Vec<usize> = gt
        .features
        .iter()
        .enumerate()
        .filter(|(_, f)| f.stage <= model_id)
        .map(|(j, _)| j)
        .collect();
    bayes_auroc_observed(gt, &observed, n_mc, n_inner, seed)
}

fn feat(name: &str, dist: FeatureDist, weight: f64, stage: u8) -> SynthFeature {
    SynthFeature {
        name: name.to_string(),
        dist,
        weight,
        stage,
    }
}

fn bern(p: f64) -> FeatureDist {
    FeatureDist::Bernoulli { p }
}

fn unif() -> FeatureDist {
    FeatureDist::Uniform { lo: -1.0, hi: 1.0 }
}

/// Default desk-scale scenario: 12 features (4 admission, 4 assessment,
/// 3 code rollups, 1 discharge), graded main effects and two strong planted
/// pairwise interactions between indicator features without main effects.
pub fn desk_scenario() -> GroundTruthModel {
    let features = vec![
        feat("AGE", unif(), 0.4, 1),
        feat("HTN", bern(0.8), 0.0, 1),
        feat("DM", bern(0.3), 0.25, 1),
        feat("ELECTIVE", bern(0.2), 0.0, 1),
        feat("NIHSS", unif(), 0.8, 2),
        feat("APRDRG_Severity_high", bern(0.4), 0.0, 2),
        feat("APRDRG_Risk_Mortality_high", bern(0.4), 0.0, 2),
        feat("MT", bern(0.3), 0.3, 2),
        feat("has_diag_Symptoms_and_signs", bern(0.5), 0.0, 3),
        feat("has_diag_Nervous_system_diseases", bern(0.5), 0.0, 3),
        feat("has_pr_Medical_and_Surgical", bern(0.3), 0.0, 3),
        feat("LOS", unif(), 0.0, 4),
    ];
    let interactions = vec![
        Interaction { j: 5, k: 6, weight: 4.0 },
        Interaction { j: 8, k: 9, weight: 4.0 },
    ];
    GroundTruthModel::new("isRigidity", -1.6, features, interactions).expect("valid scenario")
}

/// Scenario whose informative features all sit in stages 1 and 2; the
/// stage-2 block carries most of the signal.
pub fn staged_scenario() -> GroundTruthModel {
    let features = vec![
        feat("AGE", unif(), 0.5, 1),
        feat("HTN", bern(0.8), 0.3, 1),
        feat("DM", bern(0.3), 0.0, 1),
        feat("ELECTIVE", bern(0.2), 0.0, 1),
        feat("NIHSS", unif(), 2.0, 2),
        feat("APRDRG_Severity_high", bern(0.4), 1.5, 2),
        feat("APRDRG_Risk_Mortality_high", bern(0.4), 1.0, 2),
        feat("MT", bern(0.3), 0.0, 2),
        feat("has_diag_Symptoms_and_signs", bern(0.5), 0.0, 3),
        feat("has_diag_Nervous_system_diseases", bern(0.5), 0.0, 3),
        feat("has_pr_Medical_and_Surgical", bern(0.3), 0.0, 3),
        feat("LOS", unif(), 0.0, 4),
    ];
    GroundTruthModel::new("isRigidity", -1.4, features, Vec::new()).expect("valid scenario")
}
