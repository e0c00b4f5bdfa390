//! The attribution graph: nodes are module outputs at token positions,
//! edges are residual-stream reads, and a circuit is a scored edge subset.

mod flow;
mod io;
mod node;
mod wiring;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;

pub use flow::{export_causal_flow, select_flow_edges, write_causal_flow};
pub use io::{export_graph, graph_from_str, graph_to_string, import_graph, GRAPH_FILE_VERSION};
pub use node::{EdgeKind, ModuleId, NodeId, NodeKind};
pub use wiring::{Slot, Wiring};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: NodeId,
    pub dst: NodeId,
    pub kind: EdgeKind,
    /// Raw signed attribution.
    pub score: f64,
    /// Normalised attribution.
    pub score_norm: f64,
    pub in_circuit: bool,
}

impl Edge {
    pub fn key(&self) -> EdgeKey {
        EdgeKey {
            src: self.src,
            dst: self.dst,
            kind: self.kind,
        }
    }
}

/// Position-level edge identity, stable across checkpoints of one model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EdgeKey {
    pub src: NodeId,
    pub dst: NodeId,
    pub kind: EdgeKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttributionGraph {
    pub nodes: Vec<NodeId>,
    pub edges: Vec<Edge>,
    pub model_config_id: String,
    pub checkpoint_step: u64,
    pub role: String,
    pub metric_name: String,
}

/// A subset of a graph's edges, identified by index into `graph.edges`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Circuit {
    pub edges: BTreeSet<usize>,
    pub k: usize,
}

impl Circuit {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Every edge of the graph.
    pub fn full(graph: &AttributionGraph) -> Self {
        Circuit {
            edges: (0..graph.edges.len()).collect(),
            k: graph.edges.len(),
        }
    }

    pub fn from_marked(graph: &AttributionGraph) -> Self {
        let edges: BTreeSet<usize> = graph
            .edges
            .iter()
            .enumerate()
            .filter(|(_, e)| e.in_circuit)
            .map(|(i, _)| i)
            .collect();
        let k = edges.len();
        Circuit { edges, k }
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn contains(&self, edge: usize) -> bool {
        self.edges.contains(&edge)
    }

    pub fn keys(&self, graph: &AttributionGraph) -> BTreeSet<EdgeKey> {
        self.edges.iter().map(|&i| graph.edges[i].key()).collect()
    }

    /// Complement within `graph`.
    pub fn complement(&self, graph: &AttributionGraph) -> Circuit {
        let edges: BTreeSet<usize> = (0..graph.edges.len())
            .filter(|i| !self.edges.contains(i))
            .collect();
        let k = edges.len();
        Circuit { edges, k }
    }

    /// Per-edge activity mask in graph order.
    pub fn mask(&self, n_edges: usize) -> Vec<bool> {
        let mut mask = vec![false; n_edges];
        for &i in &self.edges {
            if i < n_edges {
                mask[i] = true;
            }
        }
        mask
    }
}

/// Builds the unscored graph for `config` at sequence length `seq_len`.
pub fn build_graph(config: &ModelConfig, seq_len: usize) -> Result<AttributionGraph> {
    config.validate()?;
    if seq_len == 0 {
        return Err(Error::InvalidInput(
            "sequence length must be at least 1".into(),
        ));
    }
    if seq_len > config.max_seq_len {
        return Err(Error::SequenceTooLong {
            len: seq_len,
            max: config.max_seq_len,
        });
    }
    let wiring = Wiring::new(config.n_layers, config.n_heads, seq_len);
    Ok(graph_from_wiring(&wiring, config.id()))
}

pub(crate) fn graph_from_wiring(wiring: &Wiring, model_config_id: String) -> AttributionGraph {
    let edges = wiring
        .edges
        .iter()
        .map(|&(src, slot)| {
            let slot = &wiring.slots[slot];
            Edge {
                src,
                dst: slot.dst,
                kind: slot.kind,
                score: 0.0,
                score_norm: 0.0,
                in_circuit: false,
            }
        })
        .collect();
    AttributionGraph {
        nodes: wiring.nodes(),
        edges,
        model_config_id,
        checkpoint_step: 0,
        role: String::new(),
        metric_name: String::new(),
    }
}

impl AttributionGraph {
    pub fn n_layers(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Logits)
            .map(|n| n.layer as usize)
            .max()
            .unwrap_or(0)
    }

    pub fn n_heads(&self) -> usize {
        self.nodes
            .iter()
            .filter_map(|n| n.head)
            .max()
            .map_or(0, |h| h + 1)
    }

    pub fn seq_len(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Input)
            .count()
    }

    pub fn wiring(&self) -> Wiring {
        Wiring::new(self.n_layers(), self.n_heads(), self.seq_len())
    }

    /// Confirms that this graph's edges are exactly the canonical edges of
    /// `wiring`, in order.
    pub fn check_wiring(&self, wiring: &Wiring) -> Result<()> {
        if self.edges.len() != wiring.n_edges() {
            return Err(Error::Shape(format!(
                "graph has {} edges but the model wiring at seq_len {} has {}",
                self.edges.len(),
                wiring.seq_len,
                wiring.n_edges()
            )));
        }
        for (i, (edge, &(src, slot))) in self.edges.iter().zip(&wiring.edges).enumerate() {
            let slot = &wiring.slots[slot];
            if edge.src != src || edge.dst != slot.dst || edge.kind != slot.kind {
                return Err(Error::Shape(format!(
                    "edge {i} ({} -> {} {}) does not match model wiring",
                    edge.src, edge.dst, edge.kind
                )));
            }
        }
        Ok(())
    }

    /// Writes raw and normalised scores in edge order and clears circuit marks.
    pub fn set_scores(&mut self, raw: &[f64], normalized: &[f64]) -> Result<()> {
        if raw.len() != self.edges.len() || normalized.len() != self.edges.len() {
            return Err(Error::Shape(format!(
                "score table of length {} for a graph with {} edges",
                raw.len(),
                self.edges.len()
            )));
        }
        for ((edge, &s), &n) in self.edges.iter_mut().zip(raw).zip(normalized) {
            edge.score = s;
            edge.score_norm = n;
            edge.in_circuit = false;
        }
        Ok(())
    }

    pub fn mark_circuit(&mut self, circuit: &Circuit) {
        for (i, edge) in self.edges.iter_mut().enumerate() {
            edge.in_circuit = circuit.contains(i);
        }
    }

    /// Kahn's algorithm; `None` if the edge set has a cycle or references a
    /// node outside `nodes`.
    pub fn topological_order(&self) -> Option<Vec<NodeId>> {
        let index: HashMap<NodeId, usize> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (*n, i))
            .collect();
        let mut indegree = vec![0usize; self.nodes.len()];
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            let (&s, &d) = (index.get(&e.src)?, index.get(&e.dst)?);
            out[s].push(d);
            indegree[d] += 1;
        }
        let mut ready: Vec<usize> = (0..self.nodes.len())
            .filter(|&i| indegree[i] == 0)
            .collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(n) = ready.pop() {
            order.push(self.nodes[n]);
            for &d in &out[n] {
                indegree[d] -= 1;
                if indegree[d] == 0 {
                    ready.push(d);
                }
            }
        }
        (order.len() == self.nodes.len()).then_some(order)
    }
}

/// Per-destination-node importance: Σ |score_norm| over circuit edges into
/// each node. Nodes without incoming circuit edges map to 0.
pub fn node_importance(graph: &AttributionGraph, circuit: &Circuit) -> BTreeMap<NodeId, f64> {
    let mut out: BTreeMap<NodeId, f64> = graph.nodes.iter().map(|n| (*n, 0.0)).collect();
    for &i in &circuit.edges {
        let e = &graph.edges[i];
        *out.entry(e.dst).or_insert(0.0) += e.score_norm.abs();
    }
    out
}

/// [`node_importance`] summed over positions, i.e. per (kind, layer, head).
pub fn module_importance(graph: &AttributionGraph, circuit: &Circuit) -> BTreeMap<ModuleId, f64> {
    let mut out = BTreeMap::new();
    for (node, v) in node_importance(graph, circuit) {
        *out.entry(node.module()).or_insert(0.0) += v;
    }
    out
}

/// Endpoints of circuit edges; `components_only` drops input/logits sentinels.
pub fn induced_node_set(
    graph: &AttributionGraph,
    circuit: &Circuit,
    components_only: bool,
) -> BTreeSet<NodeId> {
    circuit
        .edges
        .iter()
        .flat_map(|&i| [graph.edges[i].src, graph.edges[i].dst])
        .filter(|n| !(components_only && n.is_sentinel()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn cfg(l: usize, h: usize) -> ModelConfig {
        ModelConfig::tiny(l, h, 8, 16)
    }

    #[test]
    fn node_count_for_two_layer_two_head() {
        let g = build_graph(&cfg(2, 2), 4).unwrap();
        assert_eq!(g.nodes.len(), 32);
        let count = |k: NodeKind| g.nodes.iter().filter(|n| n.kind == k).count();
        assert_eq!(count(NodeKind::Input), 4);
        assert_eq!(count(NodeKind::AttnHead), 16);
        assert_eq!(count(NodeKind::Mlp), 8);
        assert_eq!(count(NodeKind::Logits), 4);
    }

    #[test]
    fn single_position_graph() {
        let g = build_graph(&cfg(1, 1), 1).unwrap();
        // input, one head, one MLP and logits
        assert_eq!(g.nodes.len(), 4);
        assert!(g
            .edges
            .iter()
            .all(|e| e.src.position == 0 && e.dst.position == 0));
        assert!(g.edges.iter().all(|e| e.score == 0.0 && !e.in_circuit));
    }

    #[test]
    fn edges_are_acyclic_and_causal() {
        let g = build_graph(&cfg(2, 2), 4).unwrap();
        assert!(g.topological_order().is_some());
        for e in &g.edges {
            assert!(e.src.position <= e.dst.position);
            assert_ne!(e.src, e.dst);
            match e.kind {
                EdgeKind::Q => {
                    assert_eq!(e.dst.kind, NodeKind::AttnHead);
                    assert_eq!(e.src.position, e.dst.position);
                }
                EdgeKind::K | EdgeKind::V => assert_eq!(e.dst.kind, NodeKind::AttnHead),
                EdgeKind::Flow => {
                    assert!(matches!(e.dst.kind, NodeKind::Mlp | NodeKind::Logits));
                    assert_eq!(e.src.position, e.dst.position);
                }
            }
        }
        // Input feeds logits directly through the residual stream.
        assert!(g
            .edges
            .iter()
            .any(|e| e.src.kind == NodeKind::Input && e.dst.kind == NodeKind::Logits));
    }

    #[test]
    fn rejects_overlong_sequence() {
        let c = cfg(1, 1);
        assert!(matches!(
            build_graph(&c, c.max_seq_len + 1),
            Err(Error::SequenceTooLong { .. })
        ));
        assert!(build_graph(&c, 0).is_err());
    }

    #[test]
    fn wiring_check_accepts_own_graph() {
        let g = build_graph(&cfg(2, 2), 3).unwrap();
        g.check_wiring(&g.wiring()).unwrap();
        assert!(g.check_wiring(&Wiring::new(2, 2, 4)).is_err());
    }

    fn scored(graph: &mut AttributionGraph, edges: &[(usize, f64)]) -> Circuit {
        let mut circuit = Circuit::empty();
        for &(i, s) in edges {
            graph.edges[i].score_norm = s;
            circuit.edges.insert(i);
        }
        circuit.k = circuit.edges.len();
        circuit
    }

    #[test]
    fn importance_of_empty_circuit_is_zero() {
        let g = build_graph(&cfg(1, 2), 3).unwrap();
        let imp = node_importance(&g, &Circuit::empty());
        assert_eq!(imp.len(), g.nodes.len());
        assert!(imp.values().all(|&v| v == 0.0));
    }

    #[test]
    fn importance_single_and_shared_destination() {
        let mut g = build_graph(&cfg(1, 2), 3).unwrap();
        let c = scored(&mut g, &[(0, -0.4)]);
        let dst = g.edges[0].dst;
        let imp = node_importance(&g, &c);
        assert_eq!(imp[&dst], 0.4);
        assert_eq!(imp.values().filter(|&&v| v != 0.0).count(), 1);

        // Two edges into the same destination node.
        let mut g = build_graph(&cfg(1, 2), 3).unwrap();
        let (a, b) = {
            let d = g.edges[5].dst;
            let same: Vec<usize> = (0..g.edges.len())
                .filter(|&i| g.edges[i].dst == d)
                .collect();
            (same[0], same[1])
        };
        let c = scored(&mut g, &[(a, 0.3), (b, -0.2)]);
        let imp = module_importance(&g, &c);
        assert!((imp[&g.edges[a].dst.module()] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn induced_sets() {
        let g = build_graph(&cfg(1, 1), 2).unwrap();
        assert!(induced_node_set(&g, &Circuit::empty(), false).is_empty());
        let one = Circuit {
            edges: [0].into(),
            k: 1,
        };
        let s = induced_node_set(&g, &one, false);
        assert_eq!(s, [g.edges[0].src, g.edges[0].dst].into());
        // Two edges sharing their destination.
        let into_mlp: Vec<usize> = (0..g.edges.len())
            .filter(|&i| g.edges[i].dst == NodeId::mlp(0, 0))
            .collect();
        let two = Circuit {
            edges: [into_mlp[0], into_mlp[1]].into(),
            k: 2,
        };
        assert_eq!(induced_node_set(&g, &two, false).len(), 3);
        let comp = induced_node_set(&g, &two, true);
        assert!(comp.iter().all(|n| !n.is_sentinel()));
    }
}
