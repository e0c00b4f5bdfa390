//! Per-checkpoint signal series and their file formats.

use serde::{Deserialize, Serialize};

use crate::graph::{EdgeKey, EdgeKind, NodeId};
use crate::metrics::{SparsityReport, StructuralReport, TOPK_LEVELS};
use crate::{Error, Result};

pub const TIMELINE_FILE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityBasis {
    #[default]
    Edges,
    TopNodes,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timeline {
    pub version: u32,
    pub role: String,
    pub model_config_id: String,
    pub metric: String,
    pub steps: Vec<u64>,
    /// `None` where the full and null-circuit metrics coincide.
    pub faithfulness: Vec<Option<f64>>,
    pub m_full: Vec<f64>,
    pub m_empty: Vec<f64>,
    pub m_circuit: Vec<f64>,
    /// Metric with the circuit's edges removed from the full model.
    pub m_without: Vec<f64>,
    /// Jaccard between consecutive checkpoints; one shorter than `steps`.
    pub stability: Vec<f64>,
    pub stability_basis: StabilityBasis,
    pub sparsity: Vec<SparsityReport>,
    pub structural: Vec<StructuralReport>,
    pub circuit_edges: Vec<Vec<EdgeKey>>,
    pub top_nodes: Vec<Vec<NodeId>>,
}

impl Timeline {
    pub fn validate(&self) -> Result<()> {
        let n = self.steps.len();
        if self.steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput(
                "timeline steps must be strictly increasing".into(),
            ));
        }
        let lens = [
            ("faithfulness", self.faithfulness.len()),
            ("m_full", self.m_full.len()),
            ("m_empty", self.m_empty.len()),
            ("m_circuit", self.m_circuit.len()),
            ("m_without", self.m_without.len()),
            ("sparsity", self.sparsity.len()),
            ("structural", self.structural.len()),
            ("circuit_edges", self.circuit_edges.len()),
            ("top_nodes", self.top_nodes.len()),
        ];
        if let Some((name, len)) = lens.iter().find(|(_, l)| *l != n) {
            return Err(Error::InvalidInput(format!(
                "timeline series {name} has {len} entries for {n} steps"
            )));
        }
        if n > 0 && self.stability.len() + 1 != n {
            return Err(Error::InvalidInput(format!(
                "timeline has {} stability values for {n} steps",
                self.stability.len()
            )));
        }
        Ok(())
    }

    /// Share of node mass held by the `k` heaviest nodes at each step.
    pub fn topk_series(&self, k: usize) -> Vec<f64> {
        self.sparsity
            .iter()
            .map(|s| s.topk_mass.get(&k).copied().unwrap_or(f64::NAN))
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("timeline serializes") + "\n"
    }

    pub fn from_json(text: &str, context: &str) -> Result<Timeline> {
        #[derive(Deserialize)]
        struct Probe {
            version: u32,
        }
        let probe: Probe = serde_json::from_str(text).map_err(|e| Error::parse(context, e))?;
        if probe.version != TIMELINE_FILE_VERSION {
            return Err(Error::Version {
                found: probe.version,
                expected: TIMELINE_FILE_VERSION,
            });
        }
        let t: Timeline = serde_json::from_str(text).map_err(|e| Error::parse(context, e))?;
        t.validate()?;
        Ok(t)
    }

    /// One header row, then one row per checkpoint. Stability on a row
    /// compares that checkpoint with the previous one.
    pub fn to_csv(&self) -> String {
        let mut cols = vec![
            "role".to_string(),
            "step".into(),
            "faithfulness".into(),
            "stability".into(),
        ];
        cols.extend(TOPK_LEVELS.iter().map(|k| format!("topk{k}")));
        cols.extend(
            [
                "gini",
                "coverage80",
                "coverage90",
                "coverage95",
                "n_nodes",
                "n_edges",
                "density",
                "reciprocity",
                "avg_out_degree",
                "avg_weighted_out_degree",
                "n_bridges",
                "layer_span",
                "avg_betweenness",
            ]
            .map(String::from),
        );
        cols.extend(
            EdgeKind::ALL
                .iter()
                .map(|k| format!("frac_{}", k.as_str().to_lowercase())),
        );
        cols.extend(["m_full", "m_empty", "m_circuit", "m_without"].map(String::from));
        let mut out = cols.join(",") + "\n";
        for i in 0..self.steps.len() {
            let sp = &self.sparsity[i];
            let st = &self.structural[i];
            let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            let mut row = vec![
                self.role.clone(),
                self.steps[i].to_string(),
                opt(self.faithfulness[i]),
                opt(i.checked_sub(1).map(|j| self.stability[j])),
            ];
            row.extend(
                TOPK_LEVELS
                    .iter()
                    .map(|k| opt(sp.topk_mass.get(k).copied())),
            );
            row.push(sp.gini.to_string());
            row.extend(sp.coverage_k.values().map(|c| c.to_string()));
            row.extend([
                st.n_nodes.to_string(),
                st.n_edges.to_string(),
                st.density.to_string(),
                st.reciprocity.to_string(),
                st.avg_out_degree.to_string(),
                st.avg_weighted_out_degree.to_string(),
                st.n_bridges.to_string(),
                st.layer_span.to_string(),
                st.avg_betweenness.to_string(),
            ]);
            row.extend(
                EdgeKind::ALL
                    .iter()
                    .map(|k| opt(st.edge_type_fractions.get(k).copied())),
            );
            row.extend(
                [
                    self.m_full[i],
                    self.m_empty[i],
                    self.m_circuit[i],
                    self.m_without[i],
                ]
                .map(|v| v.to_string()),
            );
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}
