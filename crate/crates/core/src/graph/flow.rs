//! Causal-flow export to Graphviz DOT.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{AttributionGraph, EdgeKind, NodeId};
use crate::error::{Error, Result};

/// Linear-interpolation quantile of an ascending slice.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Indices of the in-circuit edges kept for display.
///
/// The threshold is the `quantile` of in-circuit |score|; edges at or above
/// it are kept. If fewer than `min_edges` survive, the threshold drops to the
/// `min_edges`-th largest |score| (all in-circuit edges when there are fewer).
pub fn select_flow_edges(
    graph: &AttributionGraph,
    quantile: f64,
    min_edges: usize,
) -> Result<Vec<usize>> {
    if !(0.0..1.0).contains(&quantile) {
        return Err(Error::InvalidInput(format!(
            "quantile must lie in [0, 1), got {quantile}"
        )));
    }
    let in_circuit: Vec<usize> = (0..graph.edges.len())
        .filter(|&i| graph.edges[i].in_circuit)
        .collect();
    if in_circuit.is_empty() {
        return Err(Error::EmptyFlow);
    }
    let mut mags: Vec<f64> = in_circuit
        .iter()
        .map(|&i| graph.edges[i].score.abs())
        .collect();
    mags.sort_by(f64::total_cmp);
    let mut threshold = quantile_sorted(&mags, quantile);
    let kept = mags.iter().filter(|&&m| m >= threshold).count();
    if kept < min_edges {
        threshold = if mags.len() <= min_edges {
            mags[0]
        } else {
            mags[mags.len() - min_edges]
        };
    }
    Ok(in_circuit
        .into_iter()
        .filter(|&i| graph.edges[i].score.abs() >= threshold)
        .collect())
}

fn color(kind: EdgeKind) -> &'static str {
    match kind {
        EdgeKind::Q => "#1f77b4",
        EdgeKind::K => "#2ca02c",
        EdgeKind::V => "#d62728",
        EdgeKind::Flow => "#7f7f7f",
    }
}

/// Renders the causal-flow DOT document for `graph`.
pub fn export_causal_flow(
    graph: &AttributionGraph,
    quantile: f64,
    min_edges: usize,
) -> Result<String> {
    let selected = select_flow_edges(graph, quantile, min_edges)?;
    let max_mag = selected
        .iter()
        .map(|&i| graph.edges[i].score.abs())
        .fold(0.0f64, f64::max);

    let mut by_layer: BTreeMap<i32, Vec<NodeId>> = BTreeMap::new();
    for &i in &selected {
        let e = &graph.edges[i];
        for n in [e.src, e.dst] {
            let layer = by_layer.entry(n.layer).or_default();
            if !layer.contains(&n) {
                layer.push(n);
            }
        }
    }

    let mut out = String::new();
    out.push_str("digraph causal_flow {\n");
    out.push_str("  rankdir=LR;\n");
    out.push_str("  node [shape=box, fontname=\"Helvetica\"];\n");
    for (layer, nodes) in &mut by_layer {
        nodes.sort();
        let name = if *layer < 0 {
            "input".to_string()
        } else {
            layer.to_string()
        };
        let _ = writeln!(out, "  subgraph layer_{name} {{");
        out.push_str("    rank=same;\n");
        for n in nodes.iter() {
            let _ = writeln!(out, "    \"{n}\";");
        }
        out.push_str("  }\n");
    }
    for &i in &selected {
        let e = &graph.edges[i];
        let width = if max_mag > 0.0 {
            0.5 + 4.5 * e.score.abs() / max_mag
        } else {
            0.5
        };
        let style = if e.score < 0.0 { "dashed" } else { "solid" };
        let _ = writeln!(
            out,
            "  \"{}\" -> \"{}\" [penwidth={:.4}, color=\"{}\", style={}, label=\"{}\"];",
            e.src,
            e.dst,
            width,
            color(e.kind),
            style,
            e.kind
        );
    }
    out.push_str("}\n");
    Ok(out)
}

pub fn write_causal_flow(
    graph: &AttributionGraph,
    quantile: f64,
    min_edges: usize,
    path: &Path,
) -> Result<()> {
    let dot = export_causal_flow(graph, quantile, min_edges)?;
    fs::write(path, dot).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;
    use crate::model::ModelConfig;

    fn graph_with(scores: &[f64]) -> AttributionGraph {
        let mut g = build_graph(&ModelConfig::tiny(2, 2, 8, 16), 4).unwrap();
        for (i, &s) in scores.iter().enumerate() {
            g.edges[i].score = s;
            g.edges[i].in_circuit = true;
        }
        g
    }

    #[test]
    fn hundred_edges_keep_at_least_twelve() {
        let scores: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let kept = select_flow_edges(&graph_with(&scores), 0.95, 12).unwrap();
        assert!(kept.len() >= 12);
        assert_eq!(kept.len(), 12);
    }

    #[test]
    fn relaxation_floor_keeps_everything() {
        let kept = select_flow_edges(&graph_with(&[0.1, 0.2, 0.3, 0.4, 0.5]), 0.95, 12).unwrap();
        assert_eq!(kept.len(), 5);
    }

    #[test]
    fn zero_quantile_keeps_all_and_dashes_negatives() {
        let g = graph_with(&[-3.0, 2.0, 1.0]);
        assert_eq!(select_flow_edges(&g, 0.0, 0).unwrap().len(), 3);
        let dot = export_causal_flow(&g, 0.0, 0).unwrap();
        assert_eq!(dot.matches("->").count(), 3);
        assert_eq!(dot.matches("style=dashed").count(), 1);
        assert!(dot.contains("rank=same"));
    }

    #[test]
    fn no_circuit_edges_is_an_error() {
        let g = build_graph(&ModelConfig::tiny(1, 1, 8, 16), 2).unwrap();
        assert!(matches!(
            export_causal_flow(&g, 0.95, 12),
            Err(Error::EmptyFlow)
        ));
    }

    #[test]
    fn ties_at_threshold_are_retained() {
        let mut scores = vec![1.0; 20];
        scores.push(0.5);
        let kept = select_flow_edges(&graph_with(&scores), 0.95, 1).unwrap();
        assert_eq!(kept.len(), 20);
    }
}
