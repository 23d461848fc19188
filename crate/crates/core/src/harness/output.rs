use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::report::{ExperimentReport, MeanSd};
use crate::baselines::LogisticModel;
use crate::error::{Error, Result};
use crate::graph::{explanation_to_dot, explanation_to_json, GraphModel};
use crate::schema::{FeatureSchema, Record};

fn write(path: PathBuf, text: &str) -> Result<PathBuf> {
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn cell(m: &Option<MeanSd>) -> String {
    match m {
        Some(m) => format!("{:.3} ± {:.3}", m.mean, m.sd),
        None => "n/a".to_string(),
    }
}

/// Markdown tables: metrics grid, importance, directed and unordered
/// interactions, and rank agreement with the logistic Shapley reference.
pub fn render_tables(report: &ExperimentReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# {}\n", report.name);
    let _ = writeln!(
        s,
        "config `{}`, seeds {:?}, {} failed cell(s)\n",
        report.provenance.config_hash,
        report.provenance.seeds,
        report.failures()
    );
    if let Some(o) = &report.oracle {
        let _ = writeln!(s, "## Oracle\n\n| model | Bayes AUROC |\n|---|---|");
        for (m, a) in &o.bayes_auroc_by_model {
            let a = a.map(|a| format!("{a:.4}")).unwrap_or_else(|| "n/a".into());
            let _ = writeln!(s, "| {m} | {a} |");
        }
        if !o.planted_interactions.is_empty() {
            let pairs: Vec<String> = o.planted_interactions.iter().map(|(a, b)| format!("{a} × {b}")).collect();
            let _ = writeln!(s, "\nPlanted interactions: {}", pairs.join(", "));
        }
        s.push('\n');
    }

    let _ = writeln!(s, "## Test metrics (mean ± sd over seeds)\n");
    let _ = writeln!(
        s,
        "| model | algorithm | runs | failed | AUROC | AUPRC | accuracy | F1 | sensitivity | specificity | precision |"
    );
    let _ = writeln!(s, "|---|---|---|---|---|---|---|---|---|---|---|");
    for sm in &report.summaries {
        let m = &sm.metrics;
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |",
            sm.model_id,
            sm.algorithm,
            sm.runs,
            sm.failures,
            cell(&m.auroc),
            cell(&m.auprc),
            cell(&m.accuracy),
            cell(&m.f1),
            cell(&m.sensitivity),
            cell(&m.specificity),
            cell(&m.precision)
        );
    }

    let _ = writeln!(s, "\n## Feature importance\n");
    for sm in report.summaries.iter().filter(|sm| !sm.top_features.is_empty()) {
        let _ = writeln!(s, "### model {} / {}\n", sm.model_id, sm.algorithm);
        let _ = writeln!(s, "| rank | feature | importance | outward edge |\n|---|---|---|---|");
        for (i, r) in sm.top_features.iter().enumerate() {
            let out = r.outward_edge.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into());
            let _ = writeln!(s, "| {} | {} | {:.4} | {} |", i + 1, r.feature, r.importance, out);
        }
        s.push('\n');
    }

    let _ = writeln!(s, "## Interactions\n");
    for sm in report.summaries.iter().filter(|sm| !sm.top_pair_interactions.is_empty()) {
        let _ = writeln!(s, "### model {} / {}: directed (source → destination)\n", sm.model_id, sm.algorithm);
        let _ = writeln!(s, "| rank | source | destination | importance |\n|---|---|---|---|");
        for (i, r) in sm.top_directed_interactions.iter().enumerate() {
            let _ = writeln!(s, "| {} | {} | {} | {:.5} |", i + 1, r.source, r.destination, r.importance);
        }
        let _ = writeln!(s, "\n### model {} / {}: unordered pairs\n", sm.model_id, sm.algorithm);
        let _ = writeln!(s, "| rank | a | b | total | a → b | b → a |\n|---|---|---|---|---|---|");
        for (i, r) in sm.top_pair_interactions.iter().enumerate() {
            let _ = writeln!(
                s,
                "| {} | {} | {} | {:.5} | {:.5} | {:.5} |",
                i + 1,
                r.a,
                r.b,
                r.total,
                r.a_to_b,
                r.b_to_a
            );
        }
        s.push('\n');
    }

    let rho: Vec<_> = report
        .summaries
        .iter()
        .filter(|sm| sm.spearman_vs_logistic_shapley.is_some())
        .collect();
    if !rho.is_empty() {
        let _ = writeln!(s, "## Rank agreement with logistic Shapley\n");
        let _ = writeln!(s, "| model | algorithm | Spearman |\n|---|---|---|");
        for sm in rho {
            let _ = writeln!(s, "| {} | {} | {} |", sm.model_id, sm.algorithm, cell(&sm.spearman_vs_logistic_shapley));
        }
    }
    s
}

/// Writes `report.json` and `tables.md` into `out_dir`.
pub fn emit_report(report: &ExperimentReport, out_dir: &Path) -> Result<Vec<PathBuf>> {
    create_dir(out_dir)?;
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::Format(e.to_string()))?;
    Ok(vec![
        write(out_dir.join("report.json"), &json)?,
        write(out_dir.join("tables.md"), &render_tables(report))?,
    ])
}

/// Explains one record and writes `<stem>.json` and `<stem>.dot`.
pub fn explain_record(
    model: &GraphModel,
    record: &Record,
    k: usize,
    out_dir: &Path,
    stem: &str,
) -> Result<(PathBuf, PathBuf)> {
    let e = model.explain(record)?;
    let dot = explanation_to_dot(&e, k, true)?;
    let json = explanation_to_json(&e);
    create_dir(out_dir)?;
    Ok((
        write(out_dir.join(format!("{stem}.json")), &json)?,
        write(out_dir.join(format!("{stem}.dot")), &dot)?,
    ))
}

/// A trained checkpoint of either family.
pub enum AnyModel {
    Graph(Box<GraphModel>),
    Logistic(Box<LogisticModel>),
}

#[derive(Deserialize)]
struct Probe {
    format: Option<String>,
}

impl AnyModel {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let probe: Probe = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        match probe.format.as_deref() {
            Some(f) if f.starts_with("featgraph-graph") => Ok(AnyModel::Graph(Box::new(GraphModel::load(path)?))),
            _ => Ok(AnyModel::Logistic(Box::new(LogisticModel::load(path)?))),
        }
    }

    pub fn schema(&self) -> &FeatureSchema {
        match self {
            AnyModel::Graph(m) => &m.schema,
            AnyModel::Logistic(m) => &m.schema,
        }
    }

    pub fn predict_many(&self, records: &[Record]) -> Result<Vec<f64>> {
        match self {
            AnyModel::Graph(m) => m.predict_many(records, 512),
            AnyModel::Logistic(m) => m.predict_many(records),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        match self {
            AnyModel::Graph(m) => m.save(path),
            AnyModel::Logistic(m) => m.save(path),
        }
    }

    /// Fails when `schema` differs from the one the model was trained on.
    pub fn check_schema(&self, schema: &FeatureSchema) -> Result<()> {
        if schema.hash() != self.schema().hash() {
            return Err(Error::SchemaMismatch(format!(
                "schema hash {} does not match the checkpoint's {}",
                schema.hash(),
                self.schema().hash()
            )));
        }
        Ok(())
    }
}
