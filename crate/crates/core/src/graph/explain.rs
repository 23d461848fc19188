use serde::{Deserialize, Serialize};

use super::model::GraphModel;
use crate::diff::{sigmoid, Matrix, Mode, Tape};
use crate::error::{Error, Result};
use crate::schema::Record;

/// Per-record attributions read from the attention and pooling weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub feature_names: Vec<String>,
    /// Pooling weight per feature; sums to one.
    pub featimp: Vec<f64>,
    /// `alpha[j][i]`: attention from source `j` into destination `i`. Each
    /// column (fixed `i`) sums to one. Mean over heads for multi-head models.
    pub alpha: Vec<Vec<f64>>,
    /// `intimp[j][i] = alpha[j][i] * featimp[i]`; sums to one overall.
    pub intimp: Vec<Vec<f64>>,
    pub predicted_probability: f64,
}

impl Explanation {
    pub fn dim(&self) -> usize {
        self.featimp.len()
    }

    /// Assembles an explanation from raw weights, deriving `intimp`.
    pub fn from_weights(
        feature_names: Vec<String>,
        featimp: Vec<f64>,
        alpha: Vec<Vec<f64>>,
        predicted_probability: f64,
    ) -> Result<Self> {
        let d = featimp.len();
        if feature_names.len() != d || alpha.len() != d || alpha.iter().any(|r| r.len() != d) {
            return Err(Error::arg("explanation weights have inconsistent dimensions"));
        }
        let intimp = alpha
            .iter()
            .map(|row| row.iter().zip(&featimp).map(|(a, b)| a * b).collect())
            .collect();
        Ok(Explanation {
            feature_names,
            featimp,
            alpha,
            intimp,
            predicted_probability,
        })
    }
}

/// One directed edge and its interaction importance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub source: usize,
    pub dest: usize,
    pub weight: f64,
}

/// Dataset-level summary of many explanations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateExplanation {
    pub feature_names: Vec<String>,
    pub records: usize,
    pub mean_node_importance: Vec<f64>,
    /// Mean over records of `sum_{i != j} intimp[j][i]` per source `j`.
    pub mean_outward_edge: Vec<f64>,
    pub mean_intimp: Vec<Vec<f64>>,
}

/// Unordered feature pair with both directed contributions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairImportance {
    /// Smaller index first.
    pub a: usize,
    pub b: usize,
    pub a_to_b: f64,
    pub b_to_a: f64,
}

impl PairImportance {
    pub fn total(&self) -> f64 {
        self.a_to_b + self.b_to_a
    }
}

impl GraphModel {
    /// Eval-mode explanation of one record. The probability is produced by
    /// the same computation as [`GraphModel::predict`].
    pub fn explain(&self, record: &Record) -> Result<Explanation> {
        let mut out = self.explain_chunk(&[record])?;
        Ok(out.pop().expect("one explanation"))
    }

    /// Explanations for many records, evaluated `chunk` records per pass.
    pub fn explain_many(&self, records: &[Record], chunk: usize) -> Result<Vec<Explanation>> {
        let mut out = Vec::with_capacity(records.len());
        for part in records.chunks(chunk.max(1)) {
            let refs: Vec<&Record> = part.iter().collect();
            out.extend(self.explain_chunk(&refs)?);
        }
        Ok(out)
    }

    fn explain_chunk(&self, records: &[&Record]) -> Result<Vec<Explanation>> {
        let batch = self.encode(records)?;
        let mut tape = Tape::new(&self.params, Mode::Eval, 0);
        let vars = self.forward(&mut tape, &batch)?;
        let d = batch.nodes;
        let heads = vars.alphas.len() as f64;
        let mut alpha_sum = Matrix::zeros(records.len() * d * d, 1);
        for &a in &vars.alphas {
            alpha_sum.add_assign(tape.value(a));
        }
        let beta = tape.value(vars.beta);
        let logits = tape.value(vars.logits);
        let names: Vec<String> = self.schema.features.iter().map(|f| f.name.clone()).collect();
        (0..records.len())
            .map(|r| {
                let featimp = beta.data[r * d..(r + 1) * d].to_vec();
                // pairwise rows are laid out destination-major: (r*d + i)*d + j
                let alpha = (0..d)
                    .map(|j| {
                        (0..d)
                            .map(|i| alpha_sum.data[(r * d + i) * d + j] / heads)
                            .collect()
                    })
                    .collect();
                Explanation::from_weights(names.clone(), featimp, alpha, sigmoid(logits.data[r]))
            })
            .collect()
    }
}

/// Share of destination `i`'s importance contributed by source `j`.
pub fn interaction_proportion(e: &Explanation, j: usize, i: usize) -> Result<f64> {
    let d = e.dim();
    if j >= d || i >= d {
        return Err(Error::arg(format!("edge ({j}, {i}) out of range for {d} features")));
    }
    if e.featimp[i] == 0.0 {
        return Err(Error::UndefinedMetric(format!(
            "feature `{}` has zero importance",
            e.feature_names[i]
        )));
    }
    Ok(e.intimp[j][i] / e.featimp[i])
}

fn sorted_edges(intimp: &[Vec<f64>], exclude_self_loops: bool) -> Vec<Edge> {
    let d = intimp.len();
    let mut edges: Vec<Edge> = (0..d)
        .flat_map(|j| (0..d).map(move |i| (j, i)))
        .filter(|&(j, i)| !(exclude_self_loops && i == j))
        .map(|(j, i)| Edge {
            source: j,
            dest: i,
            weight: intimp[j][i],
        })
        .collect();
    edges.sort_by(|a, b| {
        b.weight
            .total_cmp(&a.weight)
            .then((a.source, a.dest).cmp(&(b.source, b.dest)))
    });
    edges
}

/// The `k` heaviest directed edges, ties broken by `(source, dest)`.
pub fn top_k_edges(e: &Explanation, k: usize, exclude_self_loops: bool) -> Result<Vec<Edge>> {
    top_k_from_matrix(&e.intimp, k, exclude_self_loops)
}

/// [`top_k_edges`] over any `d x d` importance matrix indexed `[source][dest]`.
pub fn top_k_from_matrix(intimp: &[Vec<f64>], k: usize, exclude_self_loops: bool) -> Result<Vec<Edge>> {
    let d = intimp.len();
    let available = if exclude_self_loops { d * d - d } else { d * d };
    if k == 0 || k > available {
        return Err(Error::arg(format!("k = {k} outside 1..={available}")));
    }
    let mut edges = sorted_edges(intimp, exclude_self_loops);
    edges.truncate(k);
    Ok(edges)
}

/// Collapses directions: every unordered pair `a < b` with both directed
/// weights, sorted by their sum descending (ties by index).
pub fn unordered_pairs(intimp: &[Vec<f64>]) -> Vec<PairImportance> {
    let d = intimp.len();
    let mut pairs: Vec<PairImportance> = (0..d)
        .flat_map(|a| (a + 1..d).map(move |b| (a, b)))
        .map(|(a, b)| PairImportance {
            a,
            b,
            a_to_b: intimp[a][b],
            b_to_a: intimp[b][a],
        })
        .collect();
    pairs.sort_by(|x, y| y.total().total_cmp(&x.total()).then((x.a, x.b).cmp(&(y.a, y.b))));
    pairs
}

pub fn aggregate_explanations(explanations: &[Explanation]) -> Result<AggregateExplanation> {
    let first = explanations
        .first()
        .ok_or_else(|| Error::arg("no explanations to aggregate"))?;
    let d = first.dim();
    if explanations.iter().any(|e| e.dim() != d) {
        return Err(Error::arg("explanations have different feature counts"));
    }
    let n = explanations.len() as f64;
    let mut node = vec![0.0; d];
    let mut outward = vec![0.0; d];
    let mut mean = vec![vec![0.0; d]; d];
    for e in explanations {
        for j in 0..d {
            node[j] += e.featimp[j];
            for i in 0..d {
                mean[j][i] += e.intimp[j][i];
                if i != j {
                    outward[j] += e.intimp[j][i];
                }
            }
        }
    }
    node.iter_mut().chain(outward.iter_mut()).for_each(|v| *v /= n);
    mean.iter_mut().flatten().for_each(|v| *v /= n);
    Ok(AggregateExplanation {
        feature_names: first.feature_names.clone(),
        records: explanations.len(),
        mean_node_importance: node,
        mean_outward_edge: outward,
        mean_intimp: mean,
    })
}
