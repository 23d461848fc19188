use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diff::{sigmoid, Matrix, Mode, Network, ParamId, ParamSet, Tape, Var, DEFAULT_LEAKY_SLOPE};
use crate::error::{Error, Result};
use crate::schema::{FeatureKind, FeatureSchema, NormalizationStats, Record};

/// Width of every node embedding after the encoder.
pub const HIDDEN: usize = 64;
/// Width of the prediction head's hidden layer.
pub const HEAD_HIDDEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKind {
    Gatv2,
    DotProduct,
}

impl AttentionKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AttentionKind::Gatv2 => "gatv2",
            AttentionKind::DotProduct => "dot_product",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub attention: AttentionKind,
    /// Heads for dot-product attention; must divide [`HIDDEN`].
    pub heads: usize,
    pub feature_embedding_dim: usize,
    /// Width of the value slot in each node input. Categorical features fill
    /// it with a learned per-category embedding; scalars use its first entry.
    pub value_dim: usize,
    pub dropout: f64,
    pub leaky_slope: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            attention: AttentionKind::Gatv2,
            heads: 4,
            feature_embedding_dim: 16,
            value_dim: 8,
            dropout: 0.3,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        }
    }
}

impl ModelConfig {
    pub fn with_attention(attention: AttentionKind) -> Self {
        ModelConfig {
            attention,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.attention == AttentionKind::DotProduct && (self.heads == 0 || !HIDDEN.is_multiple_of(self.heads)) {
            return Err(Error::arg(format!(
                "head count {} does not divide hidden width {HIDDEN}",
                self.heads
            )));
        }
        if self.feature_embedding_dim == 0 || self.value_dim == 0 {
            return Err(Error::arg("embedding widths must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::arg(format!("dropout {} not in [0,1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Ids {
    feature_embedding: ParamId,
    category_embedding: ParamId,
    enc_w1: ParamId,
    enc_b1: ParamId,
    enc_w2: ParamId,
    enc_b2: ParamId,
    // gatv2: W_left, W_right, a; dot product: W_Q, W_K, W_V
    att: [ParamId; 3],
    pool_w: ParamId,
    pool_b: ParamId,
    head_w1: ParamId,
    head_b1: ParamId,
    head_w2: ParamId,
    head_b2: ParamId,
}

/// Nodes of one record's fully connected directed graph.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGraph {
    pub node_count: usize,
    /// Ordered `(source, destination)` pairs, self-loops included.
    pub edges: Vec<(usize, usize)>,
    /// `node_count x (feature_embedding_dim + value_dim)`: feature identity
    /// embedding followed by the value encoding.
    pub node_inputs: Matrix,
}

impl FeatureGraph {
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }
}

/// Encoded node inputs for a batch of records, `n * d` rows.
#[derive(Debug, Clone)]
pub struct EncodedBatch {
    pub records: usize,
    pub nodes: usize,
    scalars: Matrix,
    feature_rows: Vec<Option<usize>>,
    category_rows: Vec<Option<usize>>,
}

/// Tape handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    pub logits: Var,
    /// One `(n*d*d) x 1` attention column per head (one for GATv2).
    pub alphas: Vec<Var>,
    /// `(n*d) x 1` pooling weights.
    pub beta: Var,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphModel {
    pub config: ModelConfig,
    pub schema: FeatureSchema,
    pub stats: NormalizationStats,
    pub params: ParamSet,
    ids: Ids,
    category_offsets: Vec<Option<usize>>,
}

fn category_offsets(schema: &FeatureSchema) -> (Vec<Option<usize>>, usize) {
    let mut total = 0;
    let offsets = schema
        .features
        .iter()
        .map(|f| match f.kind {
            FeatureKind::Categorical { cardinality } => {
                let o = total;
                total += cardinality as usize;
                Some(o)
            }
            _ => None,
        })
        .collect();
    (offsets, total)
}

impl GraphModel {
    /// Fresh model with Glorot weights and zero biases drawn from `seed`.
    pub fn new(
        schema: FeatureSchema,
        stats: NormalizationStats,
        config: ModelConfig,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if schema.is_empty() {
            return Err(Error::arg("schema has no features"));
        }
        let d = schema.len();
        let (offsets, total_categories) = category_offsets(&schema);
        let input_dim = config.feature_embedding_dim + config.value_dim;
        let mut p = ParamSet::new(seed);
        let feature_embedding = p.add_glorot("feature_embedding", d, config.feature_embedding_dim);
        let category_embedding = p.add_glorot("category_embedding", total_categories, config.value_dim);
        let enc_w1 = p.add_glorot("encoder.w1", input_dim, HIDDEN);
        let enc_b1 = p.add_zeros("encoder.b1", 1, HIDDEN);
        let enc_w2 = p.add_glorot("encoder.w2", HIDDEN, HIDDEN);
        let enc_b2 = p.add_zeros("encoder.b2", 1, HIDDEN);
        let att = match config.attention {
            AttentionKind::Gatv2 => [
                p.add_glorot("attention.w_left", HIDDEN, HIDDEN),
                p.add_glorot("attention.w_right", HIDDEN, HIDDEN),
                p.add_glorot("attention.a", HIDDEN, 1),
            ],
            AttentionKind::DotProduct => [
                p.add_glorot("attention.w_q", HIDDEN, HIDDEN),
                p.add_glorot("attention.w_k", HIDDEN, HIDDEN),
                p.add_glorot("attention.w_v", HIDDEN, HIDDEN),
            ],
        };
        let pool_w = p.add_glorot("pool.w", HIDDEN, 1);
        let pool_b = p.add_zeros("pool.b", 1, 1);
        let head_w1 = p.add_glorot("head.w1", HIDDEN, HEAD_HIDDEN);
        let head_b1 = p.add_zeros("head.b1", 1, HEAD_HIDDEN);
        let head_w2 = p.add_glorot("head.w2", HEAD_HIDDEN, 1);
        let head_b2 = p.add_zeros("head.b2", 1, 1);
        let ids = Ids {
            feature_embedding,
            category_embedding,
            enc_w1,
            enc_b1,
            enc_w2,
            enc_b2,
            att,
            pool_w,
            pool_b,
            head_w1,
            head_b1,
            head_w2,
            head_b2,
        };
        Ok(GraphModel {
            config,
            stats: stats.restrict(&schema),
            schema,
            params: p,
            ids,
            category_offsets: offsets,
        })
    }

    /// Rebuilds a model around existing parameters, checking names and shapes.
    pub fn from_parts(
        schema: FeatureSchema,
        stats: NormalizationStats,
        config: ModelConfig,
        params: ParamSet,
    ) -> Result<Self> {
        let template = GraphModel::new(schema, stats, config, params.seed)?;
        if template.params.len() != params.len() {
            return Err(Error::Format("checkpoint parameter count mismatch".into()));
        }
        for (a, b) in template.params.params.iter().zip(&params.params) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(Error::Format(format!(
                    "checkpoint parameter `{}` {:?} does not match expected `{}` {:?}",
                    b.name,
                    b.value.shape(),
                    a.name,
                    a.value.shape()
                )));
            }
        }
        if !params.all_finite() {
            return Err(Error::Format("checkpoint contains non-finite parameters".into()));
        }
        Ok(GraphModel { params, ..template })
    }

    pub fn node_count(&self) -> usize {
        self.schema.len()
    }

    /// Sets the final head layer to zero so every prediction is exactly 0.5.
    pub fn zero_head(&mut self) {
        for id in [self.ids.head_w2, self.ids.head_b2] {
            self.params.get_mut(id).data.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn encode(&self, records: &[&Record]) -> Result<EncodedBatch> {
        let d = self.node_count();
        let n = records.len();
        let mut scalars = Matrix::zeros(n * d, self.config.value_dim);
        let mut feature_rows = Vec::with_capacity(n * d);
        let mut category_rows = Vec::with_capacity(n * d);
        for (r, rec) in records.iter().enumerate() {
            if rec.values.len() != d {
                return Err(Error::SchemaMismatch(format!(
                    "record has {} values but the model expects {d} features",
                    rec.values.len()
                )));
            }
            for (j, (f, &v)) in self.schema.features.iter().zip(&rec.values).enumerate() {
                f.validate(v).map_err(|m| {
                    Error::SchemaMismatch(format!("feature `{}`: {m}", f.name))
                })?;
                let row = r * d + j;
                feature_rows.push(Some(j));
                match f.kind {
                    FeatureKind::Binary => {
                        scalars.set(row, 0, v);
                        category_rows.push(None);
                    }
                    FeatureKind::Continuous => {
                        scalars.set(row, 0, self.stats.normalize(&f.name, v));
                        category_rows.push(None);
                    }
                    FeatureKind::Categorical { .. } => {
                        let off = self.category_offsets[j].expect("categorical offset");
                        category_rows.push(Some(off + v as usize));
                    }
                }
            }
        }
        Ok(EncodedBatch {
            records: n,
            nodes: d,
            scalars,
            feature_rows,
            category_rows,
        })
    }

    pub fn build_feature_graph(&self, record: &Record) -> Result<FeatureGraph> {
        let batch = self.encode(&[record])?;
        let mut tape = Tape::new(&self.params, Mode::Eval, 0);
        let x = self.node_inputs(&mut tape, &batch)?;
        let d = self.node_count();
        let edges = (0..d).flat_map(|i| (0..d).map(move |j| (j, i))).collect();
        Ok(FeatureGraph {
            node_count: d,
            edges,
            node_inputs: tape.value(x).clone(),
        })
    }

    fn node_inputs(&self, tape: &mut Tape<'_>, batch: &EncodedBatch) -> Result<Var> {
        let fe = tape.param(self.ids.feature_embedding);
        let identity = tape.gather(fe, batch.feature_rows.clone())?;
        let scalars = tape.input(batch.scalars.clone())?;
        let ce = tape.param(self.ids.category_embedding);
        let categories = tape.gather(ce, batch.category_rows.clone())?;
        let value = tape.add(scalars, categories)?;
        tape.concat_cols(&[identity, value])
    }

    /// Attention layer over `(n*d) x HIDDEN` node states.
    pub fn attention(&self, tape: &mut Tape<'_>, h: Var, d: usize) -> Result<(Var, Vec<Var>)> {
        let [w0, w1, w2] = self.ids.att;
        match self.config.attention {
            AttentionKind::Gatv2 => {
                let (wl, wr, a) = (tape.param(w0), tape.param(w1), tape.param(w2));
                let left = tape.matmul(h, wl)?;
                let right = tape.matmul(h, wr)?;
                let scores = tape.gatv2_scores(left, right, a, d, self.config.leaky_slope)?;
                let alpha = tape.group_softmax(scores, d)?;
                let agg = tape.block_attend(alpha, right, d)?;
                Ok((tape.elu(agg)?, vec![alpha]))
            }
            AttentionKind::DotProduct => {
                let (wq, wk, wv) = (tape.param(w0), tape.param(w1), tape.param(w2));
                let q = tape.matmul(h, wq)?;
                let k = tape.matmul(h, wk)?;
                let v = tape.matmul(h, wv)?;
                let width = HIDDEN / self.config.heads;
                let scale = 1.0 / (width as f64).sqrt();
                let mut alphas = Vec::with_capacity(self.config.heads);
                let mut outs = Vec::with_capacity(self.config.heads);
                for head in 0..self.config.heads {
                    let qh = tape.slice_cols(q, head * width, width)?;
                    let kh = tape.slice_cols(k, head * width, width)?;
                    let vh = tape.slice_cols(v, head * width, width)?;
                    let scores = tape.block_dot(qh, kh, d, scale)?;
                    let alpha = tape.group_softmax(scores, d)?;
                    outs.push(tape.block_attend(alpha, vh, d)?);
                    alphas.push(alpha);
                }
                let agg = tape.concat_cols(&outs)?;
                Ok((tape.elu(agg)?, alphas))
            }
        }
    }

    /// Global attention pooling: `beta = softmax_i(gate(h_i))`,
    /// `g = sum_i beta_i h_i`.
    pub fn pool(&self, tape: &mut Tape<'_>, h: Var, d: usize) -> Result<(Var, Var)> {
        let w = tape.param(self.ids.pool_w);
        let b = tape.param(self.ids.pool_b);
        let hw = tape.matmul(h, w)?;
        let gate = tape.add_row(hw, b)?;
        let beta = tape.group_softmax(gate, d)?;
        let g = tape.block_pool(beta, h, d)?;
        Ok((g, beta))
    }

    pub fn forward(&self, tape: &mut Tape<'_>, batch: &EncodedBatch) -> Result<ForwardVars> {
        let d = batch.nodes;
        let p = self.config.dropout;
        let x = self.node_inputs(tape, batch)?;
        let e1 = tape.affine(x, self.ids.enc_w1, self.ids.enc_b1)?;
        let e1 = tape.relu(e1)?;
        let e1 = tape.dropout(e1, p)?;
        let h = tape.affine(e1, self.ids.enc_w2, self.ids.enc_b2)?;
        let (h2, alphas) = self.attention(tape, h, d)?;
        let (g, beta) = self.pool(tape, h2, d)?;
        let z1 = tape.affine(g, self.ids.head_w1, self.ids.head_b1)?;
        let z1 = tape.relu(z1)?;
        let z1 = tape.dropout(z1, p)?;
        let logits = tape.affine(z1, self.ids.head_w2, self.ids.head_b2)?;
        Ok(ForwardVars {
            logits,
            alphas,
            beta,
        })
    }

    /// Eval-mode attention over one record's `d x HIDDEN` node matrix.
    /// Returns the updated nodes and `alpha[j][i]` (source `j`, destination
    /// `i`), averaged over heads.
    pub fn attention_eval(&self, h: &Matrix) -> Result<(Matrix, Vec<Vec<f64>>)> {
        let d = h.rows;
        let mut tape = Tape::new(&self.params, Mode::Eval, 0);
        let hv = tape.input(h.clone())?;
        let (out, alphas) = self.attention(&mut tape, hv, d)?;
        let heads = alphas.len() as f64;
        let mut alpha = vec![vec![0.0; d]; d];
        for a in alphas {
            let col = tape.value(a);
            for i in 0..d {
                for j in 0..d {
                    alpha[j][i] += col.data[i * d + j] / heads;
                }
            }
        }
        Ok((tape.value(out).clone(), alpha))
    }

    /// Eval-mode global attention pooling of one record's node matrix,
    /// returning the graph vector and the node weights.
    pub fn pool_eval(&self, h: &Matrix) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut tape = Tape::new(&self.params, Mode::Eval, 0);
        let hv = tape.input(h.clone())?;
        let (g, beta) = self.pool(&mut tape, hv, h.rows)?;
        Ok((tape.value(g).data.clone(), tape.value(beta).data.clone()))
    }

    /// Positive-class probability for one record (eval mode).
    pub fn predict(&self, record: &Record) -> Result<f64> {
        let batch = self.encode(&[record])?;
        let mut tape = Tape::new(&self.params, Mode::Eval, 0);
        let vars = self.forward(&mut tape, &batch)?;
        Ok(sigmoid(tape.value(vars.logits).data[0]))
    }

    /// Eval-mode probabilities, computed `chunk` records at a time.
    pub fn predict_many(&self, records: &[Record], chunk: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(records.len());
        for part in records.chunks(chunk.max(1)) {
            let refs: Vec<&Record> = part.iter().collect();
            let batch = self.encode(&refs)?;
            let mut tape = Tape::new(&self.params, Mode::Eval, 0);
            let vars = self.forward(&mut tape, &batch)?;
            out.extend(tape.value(vars.logits).data.iter().map(|&z| sigmoid(z)));
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ck = GraphCheckpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            config: self.config.clone(),
            schema_hash: self.schema.hash(),
            schema: self.schema.clone(),
            normalization: self.stats.clone(),
            params: self.params.clone(),
        };
        let text = serde_json::to_string(&ck).expect("checkpoint serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: GraphCheckpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("checkpoint {}: {e}", path.display())))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("unknown checkpoint format `{}`", ck.format)));
        }
        if ck.schema.hash() != ck.schema_hash {
            return Err(Error::SchemaMismatch("checkpoint schema hash does not match its schema".into()));
        }
        GraphModel::from_parts(ck.schema, ck.normalization, ck.config, ck.params)
    }
}

pub const CHECKPOINT_FORMAT: &str = "featgraph-graph-v1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphCheckpoint {
    format: String,
    config: ModelConfig,
    schema_hash: String,
    schema: FeatureSchema,
    normalization: NormalizationStats,
    params: ParamSet,
}

impl Network for GraphModel {
    type Batch = EncodedBatch;

    fn logits(&self, tape: &mut Tape<'_>, batch: &EncodedBatch) -> Result<Var> {
        Ok(self.forward(tape, batch)?.logits)
    }
}
