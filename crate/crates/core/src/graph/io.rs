//! Graph file: a versioned JSON document with a node table and an edge table.
//!
//! Scores are written with the shortest decimal representation that parses
//! back to the identical `f64`, so import ∘ export is the identity.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{AttributionGraph, Edge, EdgeKind, NodeId};
use crate::error::{Error, Result};

pub const GRAPH_FILE_VERSION: u32 = 1;

#[derive(Serialize)]
struct GraphFileOut<'a> {
    version: u32,
    model_config_id: &'a str,
    checkpoint_step: u64,
    role: &'a str,
    metric_name: &'a str,
    nodes: &'a [NodeId],
    edges: &'a [Edge],
}

#[derive(Deserialize)]
struct Header {
    version: u32,
    model_config_id: String,
    checkpoint_step: u64,
    role: String,
    metric_name: String,
}

pub fn graph_to_string(graph: &AttributionGraph) -> String {
    let doc = GraphFileOut {
        version: GRAPH_FILE_VERSION,
        model_config_id: &graph.model_config_id,
        checkpoint_step: graph.checkpoint_step,
        role: &graph.role,
        metric_name: &graph.metric_name,
        nodes: &graph.nodes,
        edges: &graph.edges,
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("graph serialization is infallible");
    text.push('\n');
    text
}

pub fn graph_from_str(text: &str) -> Result<AttributionGraph> {
    let root: Value = serde_json::from_str(text).map_err(|e| Error::parse("graph file", e))?;
    let version = root
        .get("version")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::parse("graph file", "missing or non-integer `version`"))?;
    if version != GRAPH_FILE_VERSION as u64 {
        return Err(Error::Version {
            found: version as u32,
            expected: GRAPH_FILE_VERSION,
        });
    }
    let header: Header =
        serde_json::from_value(root.clone()).map_err(|e| Error::parse("graph header", e))?;
    let _ = header.version;

    let table = |name: &str| -> Result<&Vec<Value>> {
        root.get(name)
            .and_then(Value::as_array)
            .ok_or_else(|| Error::parse("graph file", format!("missing `{name}` array")))
    };
    let nodes = table("nodes")?
        .iter()
        .enumerate()
        .map(|(i, v)| {
            serde_json::from_value::<NodeId>(v.clone())
                .map_err(|e| Error::parse(format!("node record {i}"), e))
        })
        .collect::<Result<Vec<_>>>()?;
    let known: std::collections::HashSet<NodeId> = nodes.iter().copied().collect();
    let edges = table("edges")?
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let edge: Edge = serde_json::from_value(v.clone())
                .map_err(|e| Error::parse(format!("edge record {i}"), e))?;
            if !known.contains(&edge.src) || !known.contains(&edge.dst) {
                return Err(Error::parse(
                    format!("edge record {i}"),
                    "endpoint not in node table",
                ));
            }
            if !edge.score.is_finite() || !edge.score_norm.is_finite() {
                return Err(Error::parse(format!("edge record {i}"), "non-finite score"));
            }
            if edge.src == edge.dst {
                return Err(Error::parse(format!("edge record {i}"), "self-loop"));
            }
            if matches!(edge.kind, EdgeKind::Q | EdgeKind::K | EdgeKind::V)
                && edge.dst.kind != super::NodeKind::AttnHead
            {
                return Err(Error::parse(
                    format!("edge record {i}"),
                    "Q/K/V edge into a non-attention node",
                ));
            }
            Ok(edge)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(AttributionGraph {
        nodes,
        edges,
        model_config_id: header.model_config_id,
        checkpoint_step: header.checkpoint_step,
        role: header.role,
        metric_name: header.metric_name,
    })
}

pub fn export_graph(graph: &AttributionGraph, path: &Path) -> Result<()> {
    fs::write(path, graph_to_string(graph)).map_err(|e| Error::io(path, e))
}

pub fn import_graph(path: &Path) -> Result<AttributionGraph> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    graph_from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;
    use crate::model::ModelConfig;
    use proptest::prelude::*;

    fn base() -> AttributionGraph {
        let mut g = build_graph(&ModelConfig::tiny(1, 2, 8, 16), 3).unwrap();
        g.role = "Location".into();
        g.metric_name = "neg_loss".into();
        g.checkpoint_step = 128;
        g
    }

    #[test]
    fn empty_edge_graph_round_trips() {
        let mut g = base();
        g.edges.clear();
        let back = graph_from_str(&graph_to_string(&g)).unwrap();
        assert_eq!(back, g);
        assert!(back.edges.is_empty());
    }

    #[test]
    fn negative_scores_keep_their_bits() {
        let mut g = base();
        g.edges[0].score = -0.1 - 0.2;
        g.edges[1].score = -1e-300;
        g.edges[2].score = -0.0;
        let back = graph_from_str(&graph_to_string(&g)).unwrap();
        for i in 0..3 {
            assert_eq!(back.edges[i].score.to_bits(), g.edges[i].score.to_bits());
        }
    }

    #[test]
    fn version_mismatch_is_explicit() {
        let text = graph_to_string(&base()).replacen("\"version\": 1", "\"version\": 9", 1);
        assert!(matches!(
            graph_from_str(&text),
            Err(Error::Version { found: 9, .. })
        ));
    }

    #[test]
    fn malformed_record_is_named() {
        let text = graph_to_string(&base()).replacen("\"kind\": \"V\"", "\"kind\": \"Z\"", 1);
        let err = graph_from_str(&text).unwrap_err().to_string();
        assert!(err.contains("edge record"), "{err}");
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(
            scores in proptest::collection::vec(-1e6f64..1e6, 1..200),
            step in 0u64..200_000,
            mark in any::<u64>(),
        ) {
            let mut g = base();
            g.checkpoint_step = step;
            for (i, e) in g.edges.iter_mut().enumerate() {
                let s = scores[i % scores.len()] * (1.0 + i as f64 * 1e-7);
                e.score = s;
                e.score_norm = s / 3.7;
                e.in_circuit = (mark >> (i % 64)) & 1 == 1;
            }
            let back = graph_from_str(&graph_to_string(&g)).unwrap();
            prop_assert_eq!(back, g);
        }
    }
}
