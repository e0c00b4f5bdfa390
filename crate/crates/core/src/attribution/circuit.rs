use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::EdgeScoreTable;
use crate::dataset::RoleCrossPair;
use crate::error::{Error, Result};
use crate::graph::{build_graph, AttributionGraph, Circuit};
use crate::model::{ablated_eval, AblationMode, Checkpoint, Metric, ModelConfig, Replacement};

/// Graph for `config` carrying the table's scores.
pub fn score_graph(
    config: &ModelConfig,
    table: &EdgeScoreTable,
    metric_name: &str,
) -> Result<AttributionGraph> {
    let mut graph = build_graph(config, table.seq_len)?;
    graph.set_scores(&table.raw, &table.normalized)?;
    graph.checkpoint_step = table.checkpoint_step;
    graph.role = table.role.clone();
    graph.metric_name = metric_name.to_string();
    Ok(graph)
}

/// The `k` edges of largest |normalised score|; ties go to the
/// lexicographically smallest (src, dst, kind). Marks the graph.
pub fn extract_circuit(graph: &mut AttributionGraph, k: usize) -> Circuit {
    let mut order: Vec<usize> = (0..graph.edges.len()).collect();
    order.sort_by(|&a, &b| {
        let (ea, eb) = (&graph.edges[a], &graph.edges[b]);
        eb.score_norm
            .abs()
            .partial_cmp(&ea.score_norm.abs())
            .unwrap_or(Ordering::Equal)
            .then_with(|| ea.key().cmp(&eb.key()))
    });
    let circuit = Circuit {
        edges: order.into_iter().take(k).collect(),
        k,
    };
    graph.mark_circuit(&circuit);
    circuit
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Faithfulness {
    pub value: f64,
    pub m_circuit: f64,
    pub m_full: f64,
    pub m_empty: f64,
}

/// `(M(C) - M(∅)) / (M(E) - M(∅))` with every term from the same ablation
/// routine.
pub fn faithfulness(
    ckpt: &Checkpoint,
    graph: &AttributionGraph,
    circuit: &Circuit,
    pairs: &[RoleCrossPair],
    metric: Metric,
    replacement: Replacement,
) -> Result<Faithfulness> {
    let eval = |c: &Circuit| {
        ablated_eval(
            ckpt,
            pairs,
            graph,
            c,
            AblationMode::ZeroOutOfCircuit,
            metric,
            replacement,
        )
    };
    let m_full = eval(&Circuit::full(graph))?;
    let m_empty = eval(&Circuit::empty())?;
    let m_circuit = eval(circuit)?;
    let denom = m_full - m_empty;
    if denom == 0.0 {
        return Err(Error::UndefinedFaithfulness {
            full: m_full,
            empty: m_empty,
        });
    }
    Ok(Faithfulness {
        value: (m_circuit - m_empty) / denom,
        m_circuit,
        m_full,
        m_empty,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::EdgeKey;

    fn graph_with(scores: &[f64]) -> AttributionGraph {
        let mut g = build_graph(&ModelConfig::tiny(1, 1, 4, 8), 2).unwrap();
        let mut raw = vec![0.0; g.edges.len()];
        raw[..scores.len()].copy_from_slice(scores);
        g.set_scores(&raw, &raw).unwrap();
        g
    }

    #[test]
    fn top_two_by_magnitude() {
        let mut g = graph_with(&[0.1, -0.5, 0.3]);
        let c = extract_circuit(&mut g, 2);
        assert_eq!(c.edges, [1, 2].into());
        assert!(g.edges[1].in_circuit && g.edges[2].in_circuit && !g.edges[0].in_circuit);
    }

    #[test]
    fn k_beyond_edge_count_takes_all() {
        let mut g = graph_with(&[0.1]);
        let n = g.edges.len();
        assert_eq!(extract_circuit(&mut g, n + 10).len(), n);
    }

    #[test]
    fn boundary_ties_go_to_smallest_key() {
        let mut g = graph_with(&[]);
        let n = g.edges.len();
        let raw = vec![0.25; n];
        g.set_scores(&raw, &raw).unwrap();
        let c = extract_circuit(&mut g, 3);
        let mut keys: Vec<EdgeKey> = g.edges.iter().map(|e| e.key()).collect();
        keys.sort();
        let chosen: Vec<EdgeKey> = c.keys(&g).into_iter().collect();
        assert_eq!(chosen, keys[..3].to_vec());
        assert_eq!(extract_circuit(&mut g.clone(), 3), c);
    }
}
