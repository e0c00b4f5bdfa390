//! Concentration of attribution mass over nodes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::graph::{AttributionGraph, Circuit, NodeId};
use crate::{Error, Result};

pub const TOPK_LEVELS: [usize; 3] = [5, 10, 20];
pub const COVERAGE_LEVELS: [f64; 3] = [0.80, 0.90, 0.95];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub topk_mass: BTreeMap<usize, f64>,
    /// Keyed by the coverage level printed with two decimals ("0.80").
    pub coverage_k: BTreeMap<String, usize>,
    pub gini: f64,
}

/// Σ |score_norm| of incident circuit edges, for every node of the graph.
/// Each edge counts once at each endpoint.
pub fn node_mass(graph: &AttributionGraph, circuit: &Circuit) -> BTreeMap<NodeId, f64> {
    let mut out: BTreeMap<NodeId, f64> = graph.nodes.iter().map(|n| (*n, 0.0)).collect();
    for &i in &circuit.edges {
        let e = &graph.edges[i];
        let w = e.score_norm.abs();
        *out.entry(e.src).or_insert(0.0) += w;
        *out.entry(e.dst).or_insert(0.0) += w;
    }
    out
}

/// Masses sorted descending with their running sums; the last running sum
/// is the total, so `topk_mass(m, n) == 1` exactly.
fn sorted_prefix(masses: &[f64]) -> Result<Vec<f64>> {
    if let Some(m) = masses.iter().find(|m| !m.is_finite() || **m < 0.0) {
        return Err(Error::InvalidInput(format!(
            "node masses must be finite and non-negative, got {m}"
        )));
    }
    let mut sorted = masses.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let prefix: Vec<f64> = sorted
        .iter()
        .map(|m| {
            acc += m;
            acc
        })
        .collect();
    if acc <= 0.0 {
        return Err(Error::Undefined("node masses are all zero".into()));
    }
    Ok(prefix)
}

/// Share of total mass held by the `k` heaviest nodes.
pub fn topk_mass(masses: &[f64], k: usize) -> Result<f64> {
    let prefix = sorted_prefix(masses)?;
    let total = *prefix.last().unwrap();
    if k == 0 {
        return Ok(0.0);
    }
    Ok(prefix[k.min(prefix.len()) - 1] / total)
}

/// Smallest k whose top-k share reaches `p`.
pub fn coverage_k(masses: &[f64], p: f64) -> Result<usize> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "coverage level must lie in (0, 1], got {p}"
        )));
    }
    let prefix = sorted_prefix(masses)?;
    let total = *prefix.last().unwrap();
    let k = prefix
        .iter()
        .position(|s| s / total >= p)
        .unwrap_or(prefix.len() - 1);
    Ok(k + 1)
}

/// Mean absolute pairwise difference over twice the mean.
pub fn gini(masses: &[f64]) -> Result<f64> {
    let prefix = sorted_prefix(masses)?;
    let n = masses.len() as f64;
    let total = *prefix.last().unwrap();
    let mut asc = masses.to_vec();
    asc.sort_by(|a, b| a.total_cmp(b));
    let weighted: f64 = asc
        .iter()
        .enumerate()
        .map(|(i, m)| (2.0 * (i as f64 + 1.0) - n - 1.0) * m)
        .sum();
    Ok((weighted / (n * total)).max(0.0))
}

pub fn sparsity_report(masses: &[f64]) -> Result<SparsityReport> {
    let mut topk = BTreeMap::new();
    for k in TOPK_LEVELS {
        topk.insert(k, topk_mass(masses, k)?);
    }
    let mut coverage = BTreeMap::new();
    for p in COVERAGE_LEVELS {
        coverage.insert(format!("{p:.2}"), coverage_k(masses, p)?);
    }
    Ok(SparsityReport {
        topk_mass: topk,
        coverage_k: coverage,
        gini: gini(masses)?,
    })
}
