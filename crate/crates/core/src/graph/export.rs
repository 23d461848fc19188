use std::collections::BTreeSet;
use std::fmt::Write as _;

use super::explain::{top_k_edges, Explanation};
use crate::error::Result;

/// Node width in inches per unit of pooling weight.
pub const NODE_SIZE_SCALE: f64 = 10.0;

pub fn explanation_to_json(e: &Explanation) -> String {
    serde_json::to_string_pretty(e).expect("explanation serializes")
}

fn percent(v: f64) -> String {
    format!("{:.3}%", 100.0 * v)
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Graphviz rendering of the `k` heaviest edges. Nodes touched by a kept
/// edge are labelled `name\nbeta%` and sized in proportion to their pooling
/// weight; edges are labelled with their interaction importance.
pub fn explanation_to_dot(e: &Explanation, k: usize, exclude_self_loops: bool) -> Result<String> {
    let edges = top_k_edges(e, k, exclude_self_loops)?;
    let nodes: BTreeSet<usize> = edges.iter().flat_map(|x| [x.source, x.dest]).collect();
    let mut out = String::new();
    writeln!(out, "digraph explanation {{").unwrap();
    writeln!(out, "  label=\"p = {}\";", percent(e.predicted_probability)).unwrap();
    writeln!(out, "  node [shape=circle, fixedsize=true];").unwrap();
    for &n in &nodes {
        let beta = e.featimp[n];
        writeln!(
            out,
            "  n{n} [label=\"{}\\n{}\", width={:.4}];",
            escape(&e.feature_names[n]),
            percent(beta),
            NODE_SIZE_SCALE * beta
        )
        .unwrap();
    }
    for x in &edges {
        writeln!(out, "  n{} -> n{} [label=\"{}\"];", x.source, x.dest, percent(x.weight)).unwrap();
    }
    writeln!(out, "}}").unwrap();
    Ok(out)
}
