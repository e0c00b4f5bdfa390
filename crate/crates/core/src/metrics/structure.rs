//! Connectivity statistics of the circuit-induced subgraph.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::graph::{AttributionGraph, Circuit, EdgeKind, NodeId};
use crate::{Error, Result};

/// Simple directed graph on dense indices. Parallel edges of different
/// kinds between the same pair of nodes collapse into one arc.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Digraph {
    pub n: usize,
    pub arcs: BTreeSet<(usize, usize)>,
}

impl Digraph {
    pub fn new(n: usize, arcs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        Digraph {
            n,
            arcs: arcs.into_iter().filter(|(a, b)| a != b).collect(),
        }
    }

    fn out_lists(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n];
        for &(a, b) in &self.arcs {
            out[a].push(b);
        }
        out
    }

    /// |E| / (|V|(|V|−1)); zero for fewer than two nodes.
    pub fn density(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        self.arcs.len() as f64 / (self.n * (self.n - 1)) as f64
    }

    /// Fraction of arcs whose reverse arc also exists.
    pub fn reciprocity(&self) -> f64 {
        if self.arcs.is_empty() {
            return 0.0;
        }
        let r = self
            .arcs
            .iter()
            .filter(|(a, b)| self.arcs.contains(&(*b, *a)))
            .count();
        r as f64 / self.arcs.len() as f64
    }

    /// Bridges of the undirected projection.
    pub fn bridges(&self) -> usize {
        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); self.n];
        for &(a, b) in &self.arcs {
            adj[a].insert(b);
            adj[b].insert(a);
        }
        let adj: Vec<Vec<usize>> = adj.into_iter().map(|s| s.into_iter().collect()).collect();
        let mut disc = vec![usize::MAX; self.n];
        let mut low = vec![0; self.n];
        let mut timer = 0;
        let mut count = 0;
        for root in 0..self.n {
            if disc[root] != usize::MAX {
                continue;
            }
            // (node, parent, next neighbour index)
            let mut stack = vec![(root, usize::MAX, 0usize)];
            disc[root] = timer;
            low[root] = timer;
            timer += 1;
            while let Some(&mut (v, parent, ref mut next)) = stack.last_mut() {
                if let Some(&w) = adj[v].get(*next) {
                    *next += 1;
                    if w == parent {
                        continue;
                    }
                    if disc[w] == usize::MAX {
                        disc[w] = timer;
                        low[w] = timer;
                        timer += 1;
                        stack.push((w, v, 0));
                    } else {
                        low[v] = low[v].min(disc[w]);
                    }
                } else {
                    stack.pop();
                    if let Some(&(p, _, _)) = stack.last() {
                        low[p] = low[p].min(low[v]);
                        if low[v] > disc[p] {
                            count += 1;
                        }
                    }
                }
            }
        }
        count
    }

    /// Directed betweenness of every node, normalized by (n−1)(n−2).
    pub fn betweenness(&self) -> Vec<f64> {
        let n = self.n;
        let out = self.out_lists();
        let mut cb = vec![0.0; n];
        for s in 0..n {
            let mut order = Vec::with_capacity(n);
            let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
            let mut sigma = vec![0.0f64; n];
            let mut dist = vec![usize::MAX; n];
            sigma[s] = 1.0;
            dist[s] = 0;
            let mut queue = VecDeque::from([s]);
            while let Some(v) = queue.pop_front() {
                order.push(v);
                for &w in &out[v] {
                    if dist[w] == usize::MAX {
                        dist[w] = dist[v] + 1;
                        queue.push_back(w);
                    }
                    if dist[w] == dist[v] + 1 {
                        sigma[w] += sigma[v];
                        preds[w].push(v);
                    }
                }
            }
            let mut delta = vec![0.0; n];
            for &w in order.iter().rev() {
                for &v in &preds[w] {
                    delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
                }
                if w != s {
                    cb[w] += delta[w];
                }
            }
        }
        if n > 2 {
            let scale = ((n - 1) * (n - 2)) as f64;
            cb.iter_mut().for_each(|c| *c /= scale);
        } else {
            cb.iter_mut().for_each(|c| *c = 0.0);
        }
        cb
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructuralReport {
    pub n_nodes: usize,
    pub n_edges: usize,
    pub density: f64,
    pub reciprocity: f64,
    pub avg_out_degree: f64,
    pub avg_weighted_out_degree: f64,
    pub edge_type_fractions: BTreeMap<EdgeKind, f64>,
    pub n_bridges: usize,
    pub layer_span: usize,
    pub avg_betweenness: f64,
}

/// The circuit-induced subgraph: endpoint nodes in sorted order and the
/// collapsed arcs between them.
pub fn induced_digraph(graph: &AttributionGraph, circuit: &Circuit) -> (Vec<NodeId>, Digraph) {
    let nodes: Vec<NodeId> = circuit
        .edges
        .iter()
        .flat_map(|&i| [graph.edges[i].src, graph.edges[i].dst])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let idx = |n: &NodeId| nodes.binary_search(n).unwrap();
    let arcs: Vec<(usize, usize)> = circuit
        .edges
        .iter()
        .map(|&i| (idx(&graph.edges[i].src), idx(&graph.edges[i].dst)))
        .collect();
    let g = Digraph::new(nodes.len(), arcs);
    (nodes, g)
}

pub fn structural_report(graph: &AttributionGraph, circuit: &Circuit) -> Result<StructuralReport> {
    if circuit.is_empty() {
        return Err(Error::EmptySubgraph);
    }
    let (nodes, g) = induced_digraph(graph, circuit);
    let n = nodes.len() as f64;
    let mut kinds: BTreeMap<EdgeKind, f64> = EdgeKind::ALL.iter().map(|k| (*k, 0.0)).collect();
    let mut weight = 0.0;
    for &i in &circuit.edges {
        let e = &graph.edges[i];
        *kinds.get_mut(&e.kind).unwrap() += 1.0;
        weight += e.score_norm.abs();
    }
    let m = circuit.len() as f64;
    kinds.values_mut().for_each(|v| *v /= m);
    let lo = nodes.iter().map(|v| v.layer).min().unwrap();
    let hi = nodes.iter().map(|v| v.layer).max().unwrap();
    let bc = g.betweenness();
    Ok(StructuralReport {
        n_nodes: nodes.len(),
        n_edges: g.arcs.len(),
        density: g.density(),
        reciprocity: g.reciprocity(),
        avg_out_degree: g.arcs.len() as f64 / n,
        avg_weighted_out_degree: weight / n,
        edge_type_fractions: kinds,
        n_bridges: g.bridges(),
        layer_span: (hi - lo) as usize,
        avg_betweenness: bc.iter().sum::<f64>() / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        let complete = Digraph::new(3, [(0, 1), (1, 0), (0, 2), (2, 0), (1, 2), (2, 1)]);
        assert_eq!(complete.density(), 1.0);
        assert_eq!(complete.reciprocity(), 1.0);
        let g = Digraph::new(3, [(0, 1), (1, 0), (0, 2)]);
        assert!((g.reciprocity() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(Digraph::new(3, [(0, 1), (1, 2)]).bridges(), 2);
        assert_eq!(complete.bridges(), 0);
    }

    #[test]
    fn path_betweenness() {
        let bc = Digraph::new(3, [(0, 1), (1, 2)]).betweenness();
        assert_eq!(bc, vec![0.0, 0.5, 0.0]);
    }

    #[test]
    fn self_loops_and_duplicates_collapse() {
        let g = Digraph::new(2, [(0, 0), (0, 1), (0, 1)]);
        assert_eq!(g.arcs.len(), 1);
        assert_eq!(g.density(), 0.5);
    }
}
