use std::fs;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diff::sigmoid;
use crate::error::{Error, Result};
use crate::schema::{Dataset, FeatureKind, FeatureSchema, NormalizationStats, Record};

pub const DEFAULT_MAX_ITERS: usize = 1000;
pub const GRAD_TOLERANCE: f64 = 1e-6;

/// L2-regularized, class-weighted logistic regression over one-hot expanded
/// features (continuous columns z-scored).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub schema: FeatureSchema,
    pub normalization: NormalizationStats,
    /// Column range of each schema feature in the expanded space.
    pub expansion: Vec<Range<usize>>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub l2_lambda: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn expansion_map(schema: &FeatureSchema) -> Vec<Range<usize>> {
    let mut next = 0;
    schema
        .features
        .iter()
        .map(|f| {
            let width = match f.kind {
                FeatureKind::Categorical { cardinality } => cardinality as usize,
                _ => 1,
            };
            next += width;
            next - width..next
        })
        .collect()
}

fn expand_into(
    schema: &FeatureSchema,
    stats: &NormalizationStats,
    expansion: &[Range<usize>],
    values: &[f64],
    out: &mut [f64],
) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for ((f, cols), &v) in schema.features.iter().zip(expansion).zip(values) {
        match f.kind {
            FeatureKind::Binary => out[cols.start] = v,
            FeatureKind::Continuous => out[cols.start] = stats.normalize(&f.name, v),
            FeatureKind::Categorical { .. } => out[cols.start + v as usize] = 1.0,
        }
    }
}

/// Objective and gradient of the weighted NLL plus ridge penalty.
struct Problem {
    x: Vec<f64>,
    y: Vec<f64>,
    sample_weight: Vec<f64>,
    cols: usize,
    lambda: f64,
}

impl Problem {
    fn logits(&self, w: &[f64], b: f64) -> Vec<f64> {
        self.x
            .chunks(self.cols)
            .map(|row| b + row.iter().zip(w).map(|(a, c)| a * c).sum::<f64>())
            .collect()
    }

    fn objective(&self, w: &[f64], b: f64) -> f64 {
        let n = self.y.len() as f64;
        let nll: f64 = self
            .logits(w, b)
            .iter()
            .zip(&self.y)
            .zip(&self.sample_weight)
            .map(|((&z, &y), &c)| {
                // softplus(z) - y z, written to avoid overflow
                let sp = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
                c * (sp - y * z)
            })
            .sum();
        nll / n + 0.5 * self.lambda * w.iter().map(|v| v * v).sum::<f64>()
    }

    fn gradient(&self, w: &[f64], b: f64) -> (Vec<f64>, f64) {
        let n = self.y.len() as f64;
        let mut gw: Vec<f64> = w.iter().map(|v| self.lambda * v).collect();
        let mut gb = 0.0;
        for ((row, z), (&y, &c)) in self
            .x
            .chunks(self.cols)
            .zip(self.logits(w, b))
            .zip(self.y.iter().zip(&self.sample_weight))
        {
            let r = c * (sigmoid(z) - y) / n;
            gb += r;
            for (g, &a) in gw.iter_mut().zip(row) {
                *g += r * a;
            }
        }
        (gw, gb)
    }
}

/// Fits by full-batch gradient descent with Armijo backtracking and returns
/// the model together with the objective after every accepted step.
pub fn train_logistic_traced(train: &Dataset, l2_lambda: f64, max_iters: usize) -> Result<(LogisticModel, Vec<f64>)> {
    if !(l2_lambda >= 0.0 && l2_lambda.is_finite()) {
        return Err(Error::arg(format!("l2_lambda must be finite and >= 0, got {l2_lambda}")));
    }
    let n = train.len();
    let pos = train.positives();
    if n == 0 || pos == 0 || pos == n {
        return Err(Error::arg(format!(
            "logistic regression needs both classes ({pos} positive of {n})"
        )));
    }
    let schema = train.schema.clone();
    let normalization = train.stats_or_fit().restrict(&schema);
    let expansion = expansion_map(&schema);
    let cols = expansion.last().map_or(0, |r| r.end);
    let mut x = vec![0.0; n * cols];
    for (r, rec) in train.records.iter().enumerate() {
        expand_into(&schema, &normalization, &expansion, &rec.values, &mut x[r * cols..(r + 1) * cols]);
    }
    let class_weight = [n as f64 / (2.0 * (n - pos) as f64), n as f64 / (2.0 * pos as f64)];
    let problem = Problem {
        x,
        y: train.records.iter().map(|r| r.label as f64).collect(),
        sample_weight: train.records.iter().map(|r| class_weight[r.label as usize]).collect(),
        cols,
        lambda: l2_lambda,
    };

    let mut w = vec![0.0; cols];
    let mut b = 0.0;
    let mut f = problem.objective(&w, b);
    let mut trace = vec![f];
    let mut step = 1.0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iters {
        let (gw, gb) = problem.gradient(&w, b);
        let g2 = gw.iter().map(|v| v * v).sum::<f64>() + gb * gb;
        if g2.sqrt() < GRAD_TOLERANCE {
            converged = true;
            break;
        }
        iterations += 1;
        // start a little above the last accepted step so it can grow back
        step *= 2.0;
        let accepted = loop {
            let w_new: Vec<f64> = w.iter().zip(&gw).map(|(a, g)| a - step * g).collect();
            let b_new = b - step * gb;
            let f_new = problem.objective(&w_new, b_new);
            if f_new.is_finite() && f_new <= f - 0.5 * step * g2 {
                break Some((w_new, b_new, f_new));
            }
            step *= 0.5;
            if step < 1e-20 {
                break None;
            }
        };
        match accepted {
            Some((w_new, b_new, f_new)) => {
                w = w_new;
                b = b_new;
                f = f_new;
                trace.push(f);
            }
            // no descent possible at machine precision: already at the optimum
            None => {
                converged = true;
                break;
            }
        }
    }
    if !f.is_finite() || w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("logistic fit produced non-finite weights".into()));
    }
    let model = LogisticModel {
        schema,
        normalization,
        expansion,
        weights: w,
        bias: b,
        l2_lambda,
        iterations,
        converged,
    };
    Ok((model, trace))
}

pub fn train_logistic(train: &Dataset, l2_lambda: f64, max_iters: usize) -> Result<LogisticModel> {
    Ok(train_logistic_traced(train, l2_lambda, max_iters)?.0)
}

pub fn predict_logistic(model: &LogisticModel, record: &Record) -> Result<f64> {
    Ok(sigmoid(model.logit(&record.values)?))
}

impl LogisticModel {
    pub fn expanded_width(&self) -> usize {
        self.weights.len()
    }

    pub fn expand(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.schema.len() {
            return Err(Error::SchemaMismatch(format!(
                "record has {} values but the model expects {}",
                values.len(),
                self.schema.len()
            )));
        }
        for (f, &v) in self.schema.features.iter().zip(values) {
            f.validate(v)
                .map_err(|m| Error::SchemaMismatch(format!("feature `{}`: {m}", f.name)))?;
        }
        let mut out = vec![0.0; self.expanded_width()];
        expand_into(&self.schema, &self.normalization, &self.expansion, values, &mut out);
        Ok(out)
    }

    pub fn logit(&self, values: &[f64]) -> Result<f64> {
        let phi = self.expand(values)?;
        Ok(self.bias + phi.iter().zip(&self.weights).map(|(a, w)| a * w).sum::<f64>())
    }

    pub fn predict_many(&self, records: &[Record]) -> Result<Vec<f64>> {
        records.iter().map(|r| predict_logistic(self, r)).collect()
    }

    /// Per-column logit contributions `w_c (phi_c(x) - mean_b phi_c(b))`.
    pub fn column_contributions(&self, x: &Record, background: &[Record]) -> Result<Vec<f64>> {
        if background.is_empty() {
            return Err(Error::arg("background set is empty"));
        }
        let phi = self.expand(&x.values)?;
        let mut mean = vec![0.0; phi.len()];
        for b in background {
            for (m, v) in mean.iter_mut().zip(self.expand(&b.values)?) {
                *m += v / background.len() as f64;
            }
        }
        Ok(phi
            .iter()
            .zip(&mean)
            .zip(&self.weights)
            .map(|((p, m), w)| w * (p - m))
            .collect())
    }

    /// Folds expanded-column values back to one value per schema feature.
    pub fn resum_columns(&self, columns: &[f64]) -> Vec<f64> {
        self.expansion.iter().map(|r| columns[r.clone()].iter().sum()).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).expect("logistic model serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: LogisticModel = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("logistic model {}: {e}", path.display())))?;
        if m.expansion != expansion_map(&m.schema) || m.weights.len() != m.expansion.last().map_or(0, |r| r.end) {
            return Err(Error::Format("logistic model expansion does not match its schema".into()));
        }
        Ok(m)
    }
}
