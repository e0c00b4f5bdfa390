//! Overlap and spectral similarity between circuits.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::graph::{AttributionGraph, Circuit, EdgeKey, EdgeKind, ModuleId, NodeId};
use crate::{Error, Result};

use super::sparsity::node_mass;

pub const DEFAULT_TOP_NODES: usize = 30;
pub const DEFAULT_TOP_EDGES: usize = 30;
pub const DEFAULT_SPECTRAL_EDGES: usize = 50;
pub const DEFAULT_EIGENVALUES: usize = 20;

/// |A ∩ B| / |A ∪ B|, with two empty sets counting as identical.
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    if a.is_empty() && b.is_empty() {
        tracing::warn!("jaccard of two empty sets taken as 1");
        return 1.0;
    }
    let inter = a.intersection(b).count();
    inter as f64 / (a.len() + b.len() - inter) as f64
}

/// Jaccard between each consecutive pair of sets.
pub fn stability_series<T: Ord>(sets: &[BTreeSet<T>]) -> Result<Vec<f64>> {
    if sets.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "stability needs at least 2 checkpoints, got {}",
            sets.len()
        )));
    }
    Ok(sets.windows(2).map(|w| jaccard(&w[0], &w[1])).collect())
}

/// The `k` heaviest nodes of a circuit by incident mass, ties broken by id.
/// Nodes without mass are never selected.
pub fn top_k_nodes(graph: &AttributionGraph, circuit: &Circuit, k: usize) -> BTreeSet<NodeId> {
    top_k(node_mass(graph, circuit), k)
}

/// Module identity with positions marginalised out.
pub type ModuleEdge = (ModuleId, ModuleId, EdgeKind);

pub fn module_mass(graph: &AttributionGraph) -> BTreeMap<ModuleId, f64> {
    let mut out = BTreeMap::new();
    for (n, m) in node_mass(graph, &Circuit::full(graph)) {
        *out.entry(n.module()).or_insert(0.0) += m;
    }
    out
}

pub fn module_edge_mass(graph: &AttributionGraph) -> BTreeMap<ModuleEdge, f64> {
    let mut out = BTreeMap::new();
    for e in &graph.edges {
        *out.entry((e.src.module(), e.dst.module(), e.kind))
            .or_insert(0.0) += e.score_norm.abs();
    }
    out
}

fn top_k<T: Ord + Copy>(weights: BTreeMap<T, f64>, k: usize) -> BTreeSet<T> {
    let mut v: Vec<(T, f64)> = weights.into_iter().filter(|(_, w)| *w > 0.0).collect();
    v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    v.into_iter().take(k).map(|(t, _)| t).collect()
}

/// Top-k module and module-edge overlap between two graphs, which may come
/// from models of different depth or sequence length.
pub fn cross_model_overlap(
    a: &AttributionGraph,
    b: &AttributionGraph,
    k_nodes: usize,
    k_edges: usize,
) -> (f64, f64) {
    let nodes = jaccard(
        &top_k(module_mass(a), k_nodes),
        &top_k(module_mass(b), k_nodes),
    );
    let edges = jaccard(
        &top_k(module_edge_mass(a), k_edges),
        &top_k(module_edge_mass(b), k_edges),
    );
    (nodes, edges)
}

/// Eigenvalues of the weighted Laplacian of an undirected graph, ascending.
/// Repeated pairs accumulate weight.
pub fn laplacian_eigenvalues(n: usize, edges: &[(usize, usize, f64)]) -> Result<Vec<f64>> {
    let mut lap = DMatrix::<f64>::zeros(n, n);
    for &(u, v, w) in edges {
        if u == v {
            continue;
        }
        lap[(u, v)] -= w;
        lap[(v, u)] -= w;
        lap[(u, u)] += w;
        lap[(v, v)] += w;
    }
    let eig =
        SymmetricEigen::try_new(lap, f64::EPSILON, 10_000).ok_or(Error::EigenNonConvergence(n))?;
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| a.total_cmp(b));
    Ok(vals)
}

/// RMSE between the `n_eigs` smallest entries of two ascending spectra,
/// padding short spectra with zeros.
pub fn spectrum_rmse(a: &[f64], b: &[f64], n_eigs: usize) -> f64 {
    if n_eigs == 0 {
        return 0.0;
    }
    let at = |s: &[f64], i: usize| s.get(i).copied().unwrap_or(0.0);
    let sq: f64 = (0..n_eigs).map(|i| (at(a, i) - at(b, i)).powi(2)).sum();
    (sq / n_eigs as f64).sqrt()
}

/// `(u, v, weight)` triples on dense node indices.
pub type WeightedEdges = Vec<(usize, usize, f64)>;

/// Undirected weighted graph on the `k_edges` edges of largest |score_norm|,
/// with weights |score_norm| summed over both directions and edge kinds.
pub fn spectral_graph(graph: &AttributionGraph, k_edges: usize) -> Result<(usize, WeightedEdges)> {
    let mut order: Vec<(f64, EdgeKey)> = graph
        .edges
        .iter()
        .filter(|e| e.score_norm != 0.0)
        .map(|e| (e.score_norm.abs(), e.key()))
        .collect();
    if order.is_empty() {
        return Err(Error::InvalidInput(format!(
            "graph for role {:?} at step {} has no scored edge",
            graph.role, graph.checkpoint_step
        )));
    }
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    order.truncate(k_edges);
    let nodes: Vec<NodeId> = order
        .iter()
        .flat_map(|(_, k)| [k.src, k.dst])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let idx = |n: &NodeId| nodes.binary_search(n).unwrap();
    let edges = order
        .iter()
        .map(|(w, k)| (idx(&k.src), idx(&k.dst), *w))
        .collect();
    Ok((nodes.len(), edges))
}

pub fn spectral_distance(
    a: &AttributionGraph,
    b: &AttributionGraph,
    k_edges: usize,
    n_eigs: usize,
) -> Result<f64> {
    let (na, ea) = spectral_graph(a, k_edges)?;
    let (nb, eb) = spectral_graph(b, k_edges)?;
    Ok(spectrum_rmse(
        &laplacian_eigenvalues(na, &ea)?,
        &laplacian_eigenvalues(nb, &eb)?,
        n_eigs,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub node_jaccard: f64,
    pub edge_jaccard: f64,
    pub spectral_distance: f64,
    pub k_nodes: usize,
    pub k_edges: usize,
    pub spectral_edges: usize,
    pub n_eigs: usize,
}

pub fn similarity_report(
    a: &AttributionGraph,
    b: &AttributionGraph,
    k_nodes: usize,
    k_edges: usize,
    spectral_edges: usize,
    n_eigs: usize,
) -> Result<SimilarityReport> {
    let (node_jaccard, edge_jaccard) = cross_model_overlap(a, b, k_nodes, k_edges);
    Ok(SimilarityReport {
        node_jaccard,
        edge_jaccard,
        spectral_distance: spectral_distance(a, b, spectral_edges, n_eigs)?,
        k_nodes,
        k_edges,
        spectral_edges,
        n_eigs,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoleOverlap {
    pub roles: Vec<String>,
    /// Row-major `roles.len()²` Jaccard values.
    pub values: Vec<f64>,
}

impl RoleOverlap {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.roles.len() + j]
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("role,{}\n", self.roles.join(","));
        for (i, r) in self.roles.iter().enumerate() {
            let row: Vec<String> = (0..self.roles.len())
                .map(|j| format!("{}", self.get(i, j)))
                .collect();
            out.push_str(&format!("{r},{}\n", row.join(",")));
        }
        out
    }
}

/// Pairwise Jaccard of top-k module sets between role graphs of one model
/// checkpoint.
pub fn cross_role_overlap(graphs: &[&AttributionGraph], k: usize) -> Result<RoleOverlap> {
    if graphs.len() < 2 {
        return Err(Error::InvalidInput(
            "role overlap needs at least 2 roles".into(),
        ));
    }
    let first = graphs[0];
    if let Some(g) = graphs.iter().find(|g| {
        g.model_config_id != first.model_config_id || g.checkpoint_step != first.checkpoint_step
    }) {
        return Err(Error::InvalidInput(format!(
            "role {:?} comes from {} step {}, role {:?} from {} step {}",
            first.role,
            first.model_config_id,
            first.checkpoint_step,
            g.role,
            g.model_config_id,
            g.checkpoint_step
        )));
    }
    let sets: Vec<BTreeSet<ModuleId>> = graphs.iter().map(|g| top_k(module_mass(g), k)).collect();
    let n = sets.len();
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            values[i * n + j] = if i == j {
                1.0
            } else {
                jaccard(&sets[i], &sets[j])
            };
        }
    }
    Ok(RoleOverlap {
        roles: graphs.iter().map(|g| g.role.clone()).collect(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(v: &[u32]) -> BTreeSet<u32> {
        v.iter().copied().collect()
    }

    #[test]
    fn jaccard_reference_values() {
        assert_eq!(jaccard(&set(&[1, 2]), &set(&[1, 2])), 1.0);
        assert!((jaccard(&set(&[1, 2]), &set(&[2, 3])) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(jaccard(&set(&[1]), &set(&[2])), 0.0);
        assert_eq!(jaccard::<u32>(&set(&[]), &set(&[])), 1.0);
    }

    #[test]
    fn stability_reference_series() {
        let same = vec![set(&[1, 2]); 4];
        assert_eq!(stability_series(&same).unwrap(), vec![1.0; 3]);
        let turnover = vec![set(&[1]), set(&[2]), set(&[3])];
        assert_eq!(stability_series(&turnover).unwrap(), vec![0.0; 2]);
        let half = vec![set(&[1, 2]), set(&[2, 3]), set(&[3, 4])];
        for v in stability_series(&half).unwrap() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(stability_series(&[set(&[1])]).is_err());
    }

    #[test]
    fn two_and_three_node_spectra() {
        let a = laplacian_eigenvalues(2, &[(0, 1, 1.0)]).unwrap();
        let b = laplacian_eigenvalues(3, &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        assert!((a[1] - 2.0).abs() < 1e-12);
        assert!((b[1] - 1.0).abs() < 1e-12 && (b[2] - 3.0).abs() < 1e-12);
        assert!((spectrum_rmse(&a, &b, 2) - 0.5f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn padding_uses_zeros() {
        assert!(
            (spectrum_rmse(&[0.0, 2.0], &[0.0, 2.0, 4.0], 3) - (16.0f64 / 3.0).sqrt()).abs()
                < 1e-12
        );
    }
}
