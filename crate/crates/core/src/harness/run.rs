use std::time::{SystemTime, UNIX_EPOCH};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Algorithm, ExperimentConfig};
use super::report::{
    CellReport, CellSummary, DirectedRow, ExperimentReport, FeatureRow, MeanSd, MetricSummary, Oracle, PairRow,
    Provenance, TOP_ROWS,
};
use crate::baselines::{exact_shapley, sampled_shapley, train_logistic, AttributionResult, LogisticModel};
use crate::error::{Error, Result};
use crate::graph::{aggregate_explanations, top_k_from_matrix, train, unordered_pairs, GraphModel};
use crate::metrics::{confusion_metrics, optimal_threshold, spearman, MetricsReport, ScoredSet};
use crate::schema::{select_stage_features, split_dataset, Dataset, Record};
use crate::synth::{bayes_auroc_for_model, GroundTruthModel};

const EVAL_CHUNK: usize = 512;
/// Inner draws used to marginalize unobserved features in the oracle.
const ORACLE_INNER: usize = 128;
const ORACLE_SEED: u64 = 0x0c1e;

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Data for one `(seed, model_id)` pair, shared by every algorithm.
struct Slice<'a> {
    seed: u64,
    model_id: u8,
    train: Dataset,
    val: Dataset,
    test: Dataset,
    ground_truth: Option<&'a GroundTruthModel>,
}

impl Slice<'_> {
    fn blank_cell(&self, algorithm: Algorithm) -> CellReport {
        CellReport {
            model_id: self.model_id,
            algorithm,
            seed: self.seed,
            error: None,
            feature_names: self.train.schema.names().iter().map(|s| s.to_string()).collect(),
            n_train: self.train.len(),
            n_val: self.val.len(),
            n_test: self.test.len(),
            metrics: None,
            best_epoch: None,
            best_val_auroc: None,
            importance: None,
            mean_outward_edge: None,
            mean_intimp: None,
            spearman_vs_logistic_shapley: None,
            planted_pair_ranks: None,
        }
    }
}

/// Validation-chosen threshold applied to test scores.
fn threshold_metrics(val_scores: Vec<f64>, val: &Dataset, test_scores: Vec<f64>, test: &Dataset) -> Result<MetricsReport> {
    let threshold = optimal_threshold(&ScoredSet::new(val_scores, val.labels())?)?;
    confusion_metrics(&ScoredSet::new(test_scores, test.labels())?, threshold)
}

/// The logistic baseline and its mean |Shapley| on the leading test records.
struct Reference {
    model: LogisticModel,
    shapley_importance: Vec<f64>,
}

fn shapley_records(cfg: &ExperimentConfig, test: &Dataset) -> usize {
    cfg.attribution.shapley_records.min(test.len())
}

fn background(cfg: &ExperimentConfig, train: &Dataset, seed: u64) -> Dataset {
    let n = cfg.attribution.background_rows.min(train.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb6_5eed);
    let mut idx = sample(&mut rng, train.len(), n).into_vec();
    idx.sort_unstable();
    train.subset(&idx)
}

fn logistic_reference(cfg: &ExperimentConfig, s: &Slice<'_>) -> Result<Reference> {
    let model = train_logistic(&s.train, cfg.logistic.l2_lambda, cfg.logistic.max_iters)?;
    let bg = background(cfg, &s.train, s.seed);
    let score = |rows: &[Record]| model.predict_many(rows);
    let d = s.train.schema.len();
    let n = shapley_records(cfg, &s.test);
    let mut total = vec![0.0; d];
    for x in &s.test.records[..n] {
        let r: AttributionResult = if d <= cfg.attribution.exact_d_max {
            exact_shapley(&score, &bg, x, cfg.attribution.exact_d_max)?
        } else {
            sampled_shapley(&score, &bg, x, cfg.attribution.coalitions, s.seed)?
        };
        for (t, v) in total.iter_mut().zip(&r.values) {
            *t += v.abs() / n as f64;
        }
    }
    Ok(Reference {
        model,
        shapley_importance: total,
    })
}

fn logistic_cell(s: &Slice<'_>, reference: &std::result::Result<Reference, String>) -> CellReport {
    let mut cell = s.blank_cell(Algorithm::Logistic);
    let outcome = reference.as_ref().map_err(|e| e.clone()).and_then(|r| {
        let val_scores = r.model.predict_many(&s.val.records).map_err(|e| e.to_string())?;
        let test_scores = r.model.predict_many(&s.test.records).map_err(|e| e.to_string())?;
        threshold_metrics(val_scores, &s.val, test_scores, &s.test).map_err(|e| e.to_string())
    });
    match (outcome, reference) {
        (Ok(m), Ok(r)) => {
            cell.metrics = Some(m);
            cell.importance = Some(r.shapley_importance.clone());
        }
        (Err(e), _) => cell.error = Some(e),
        (Ok(_), Err(e)) => cell.error = Some(e.clone()),
    }
    cell
}

fn planted_ranks(gt: &GroundTruthModel, names: &[String], intimp: &[Vec<f64>]) -> Vec<Option<usize>> {
    let pairs = unordered_pairs(intimp);
    gt.interaction_ranking()
        .iter()
        .map(|&(j, k)| {
            let a = names.iter().position(|n| *n == gt.features[j].name)?;
            let b = names.iter().position(|n| *n == gt.features[k].name)?;
            let (a, b) = (a.min(b), a.max(b));
            pairs.iter().position(|p| (p.a, p.b) == (a, b)).map(|r| r + 1)
        })
        .collect()
}

fn graph_cell(
    cfg: &ExperimentConfig,
    s: &Slice<'_>,
    algorithm: Algorithm,
    reference: Option<&Reference>,
) -> CellReport {
    let mut cell = s.blank_cell(algorithm);
    if let Err(e) = fill_graph_cell(cfg, s, algorithm, reference, &mut cell) {
        let keep = s.blank_cell(algorithm);
        cell = CellReport {
            error: Some(e.to_string()),
            ..keep
        };
    }
    cell
}

fn fill_graph_cell(
    cfg: &ExperimentConfig,
    s: &Slice<'_>,
    algorithm: Algorithm,
    reference: Option<&Reference>,
    cell: &mut CellReport,
) -> Result<()> {
    let kind = algorithm.attention().expect("graph algorithm");
    let model_cfg = cfg.model.model_config(kind);
    let out = train(&s.train, &s.val, &model_cfg, &cfg.training, s.seed)?;
    let model: &GraphModel = &out.model;
    let val_scores = model.predict_many(&s.val.records, EVAL_CHUNK)?;
    let test_scores = model.predict_many(&s.test.records, EVAL_CHUNK)?;
    cell.metrics = Some(threshold_metrics(val_scores, &s.val, test_scores, &s.test)?);
    cell.best_epoch = Some(out.best_epoch);
    cell.best_val_auroc = Some(out.best_val_auroc);

    let n_explain = cfg.attribution.explain_records.unwrap_or(s.test.len()).min(s.test.len());
    let n_shap = shapley_records(cfg, &s.test);
    let explained = model.explain_many(&s.test.records[..n_explain.max(n_shap)], EVAL_CHUNK)?;
    let agg = aggregate_explanations(&explained[..n_explain])?;
    if let Some(r) = reference {
        let subset = aggregate_explanations(&explained[..n_shap])?;
        cell.spearman_vs_logistic_shapley = spearman(&subset.mean_node_importance, &r.shapley_importance).ok();
    }
    if let Some(gt) = s.ground_truth {
        cell.planted_pair_ranks = Some(planted_ranks(gt, &cell.feature_names, &agg.mean_intimp));
    }
    cell.importance = Some(agg.mean_node_importance);
    cell.mean_outward_edge = Some(agg.mean_outward_edge);
    cell.mean_intimp = Some(agg.mean_intimp);
    Ok(())
}

fn failed_cells(cfg: &ExperimentConfig, seed: u64, error: &Error) -> Vec<CellReport> {
    let mut out = Vec::new();
    for &model_id in &cfg.model_ids {
        for &algorithm in &cfg.algorithms {
            out.push(CellReport {
                model_id,
                algorithm,
                seed,
                error: Some(error.to_string()),
                feature_names: Vec::new(),
                n_train: 0,
                n_val: 0,
                n_test: 0,
                metrics: None,
                best_epoch: None,
                best_val_auroc: None,
                importance: None,
                mean_outward_edge: None,
                mean_intimp: None,
                spearman_vs_logistic_shapley: None,
                planted_pair_ranks: None,
            });
        }
    }
    out
}

/// Runs the full grid. Configuration problems and unreadable inputs abort;
/// a failing cell is recorded with its error and the grid continues.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let started = unix_now();
    let gt = cfg.ground_truth()?;
    let mut model_ids = cfg.model_ids.clone();
    model_ids.sort_unstable();
    let mut algorithms = cfg.algorithms.clone();
    algorithms.sort_unstable();

    let oracle = gt.as_ref().map(|g| Oracle {
            bayes_auroc_by_model: model_ids
                .iter()
                .map(|&m| (m, bayes_auroc_for_model(g, m, cfg.data.oracle_samples, ORACLE_INNER, ORACLE_SEED).ok()))
                .collect(),
            planted_interactions: g
                .interaction_ranking()
                .iter()
                .map(|&(j, k)| (g.features[j].name.clone(), g.features[k].name.clone()))
                .collect(),
        });

    let mut cells = Vec::new();
    for &seed in &cfg.seeds {
        let data = cfg.load_data(seed)?;
        let (train_all, val_all, test_all) =
            match split_dataset(&data.dataset, cfg.data.test_fraction, cfg.data.val_fraction, seed) {
                Ok(parts) => parts,
                Err(e) => {
                    cells.extend(failed_cells(cfg, seed, &e));
                    continue;
                }
            };
        for &model_id in &model_ids {
            let slice = (|| -> Result<Slice<'_>> {
                Ok(Slice {
                    seed,
                    model_id,
                    train: select_stage_features(&train_all, model_id)?,
                    val: select_stage_features(&val_all, model_id)?,
                    test: select_stage_features(&test_all, model_id)?,
                    ground_truth: gt.as_ref(),
                })
            })();
            let slice = match slice {
                Ok(s) if s.train.schema.is_empty() => {
                    let e = Error::arg(format!("model {model_id} selects no features"));
                    cells.extend(failed_cells(cfg, seed, &e).into_iter().filter(|c| c.model_id == model_id));
                    continue;
                }
                Ok(s) => s,
                Err(e) => {
                    cells.extend(failed_cells(cfg, seed, &e).into_iter().filter(|c| c.model_id == model_id));
                    continue;
                }
            };
            let reference = logistic_reference(cfg, &slice).map_err(|e| e.to_string());
            for &algorithm in &algorithms {
                let cell = if algorithm.is_graph() {
                    graph_cell(cfg, &slice, algorithm, reference.as_ref().ok())
                } else {
                    logistic_cell(&slice, &reference)
                };
                cells.push(cell);
            }
        }
    }
    cells.sort_by_key(|c| (c.model_id, c.algorithm, c.seed));

    let summaries = model_ids
        .iter()
        .flat_map(|&m| algorithms.iter().map(move |&a| (m, a)))
        .map(|(m, a)| summarize(m, a, &cells))
        .collect();
    Ok(ExperimentReport {
        name: cfg.name.clone(),
        provenance: Provenance {
            config_hash: cfg.hash(),
            seeds: cfg.seeds.clone(),
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            started_at_unix: started,
            finished_at_unix: unix_now(),
        },
        config: cfg.clone(),
        oracle,
        cells,
        summaries,
    })
}

fn mean_vectors<'a>(rows: impl Iterator<Item = &'a Vec<f64>>) -> Option<Vec<f64>> {
    let rows: Vec<&Vec<f64>> = rows.collect();
    let first = rows.first()?;
    let mut out = vec![0.0; first.len()];
    for r in &rows {
        for (o, v) in out.iter_mut().zip(r.iter()) {
            *o += v / rows.len() as f64;
        }
    }
    Some(out)
}

fn summarize(model_id: u8, algorithm: Algorithm, cells: &[CellReport]) -> CellSummary {
    let all: Vec<&CellReport> = cells
        .iter()
        .filter(|c| c.model_id == model_id && c.algorithm == algorithm)
        .collect();
    let ok: Vec<&CellReport> = all.iter().copied().filter(|c| c.ok()).collect();
    let metric = |f: &dyn Fn(&MetricsReport) -> Option<f64>| {
        let xs: Vec<f64> = ok.iter().filter_map(|c| c.metrics.as_ref().and_then(f)).collect();
        MeanSd::of(&xs)
    };
    let metrics = MetricSummary {
        auroc: metric(&|m| m.auroc),
        auprc: metric(&|m| m.auprc),
        accuracy: metric(&|m| Some(m.accuracy)),
        f1: metric(&|m| Some(m.f1)),
        sensitivity: metric(&|m| Some(m.sensitivity)),
        specificity: metric(&|m| Some(m.specificity)),
        precision: metric(&|m| Some(m.precision)),
    };
    let names: Vec<String> = ok.first().map(|c| c.feature_names.clone()).unwrap_or_default();

    let importance = mean_vectors(ok.iter().filter_map(|c| c.importance.as_ref()));
    let outward = mean_vectors(ok.iter().filter_map(|c| c.mean_outward_edge.as_ref()));
    let mut top_features = Vec::new();
    if let Some(imp) = &importance {
        let mut order: Vec<usize> = (0..imp.len()).collect();
        order.sort_by(|&a, &b| imp[b].total_cmp(&imp[a]).then(a.cmp(&b)));
        top_features = order
            .into_iter()
            .take(TOP_ROWS)
            .map(|j| FeatureRow {
                feature: names[j].clone(),
                importance: imp[j],
                outward_edge: outward.as_ref().map(|o| o[j]),
            })
            .collect();
    }

    let mut top_directed = Vec::new();
    let mut top_pairs = Vec::new();
    let intimps: Vec<&Vec<Vec<f64>>> = ok.iter().filter_map(|c| c.mean_intimp.as_ref()).collect();
    if let Some(first) = intimps.first() {
        let d = first.len();
        let mut mean = vec![vec![0.0; d]; d];
        for m in &intimps {
            for (row, src) in mean.iter_mut().zip(m.iter()) {
                for (o, v) in row.iter_mut().zip(src) {
                    *o += v / intimps.len() as f64;
                }
            }
        }
        let k = TOP_ROWS.min(d * d - d);
        if k > 0 {
            if let Ok(edges) = top_k_from_matrix(&mean, k, true) {
                top_directed = edges
                    .iter()
                    .map(|e| DirectedRow {
                        source: names[e.source].clone(),
                        destination: names[e.dest].clone(),
                        importance: e.weight,
                    })
                    .collect();
            }
        }
        top_pairs = unordered_pairs(&mean)
            .into_iter()
            .take(TOP_ROWS)
            .map(|p| PairRow {
                a: names[p.a].clone(),
                b: names[p.b].clone(),
                total: p.total(),
                a_to_b: p.a_to_b,
                b_to_a: p.b_to_a,
            })
            .collect();
    }
    let rho: Vec<f64> = ok.iter().filter_map(|c| c.spearman_vs_logistic_shapley).collect();
    CellSummary {
        model_id,
        algorithm,
        runs: all.len(),
        failures: all.len() - ok.len(),
        metrics,
        top_features,
        top_directed_interactions: top_directed,
        top_pair_interactions: top_pairs,
        spearman_vs_logistic_shapley: MeanSd::of(&rho),
    }
}
