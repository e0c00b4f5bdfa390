//! Checkpoint-by-checkpoint circuit localisation and emergence analysis.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::changepoint::{changepoint, ChangePoint, DEFAULT_BOOTSTRAP, DEFAULT_MIN_SEGMENT};
use super::markers::{
    consolidation_from_stability, detect_detectability, detect_indispensability, DropThreshold,
    IndispensabilityMode, Marker, DEFAULT_CONSOLIDATION_K, DEFAULT_CONSOLIDATION_PERSISTENCE,
    DEFAULT_CONSOLIDATION_THRESHOLD,
};
use super::timeline::{StabilityBasis, Timeline, TIMELINE_FILE_VERSION};
use crate::attribution::{aggregate_role, extract_circuit, score_graph, IgConfig};
use crate::dataset::RoleCrossPair;
use crate::graph::{export_graph, AttributionGraph, Circuit, EdgeKey, NodeId};
use crate::metrics::{
    jaccard, node_mass, sparsity_report, structural_report, top_k_nodes, SparsityReport,
    StructuralReport,
};
use crate::model::{ablated_eval, AblationMode, Checkpoint, Metric, Replacement};
use crate::rng::derive_seed;
use crate::{Error, Result};

pub const REPORT_FILE_VERSION: u32 = 1;
pub const TIMELINE_JSON: &str = "timeline.json";
pub const TIMELINE_CSV: &str = "timeline.csv";
pub const REPORT_JSON: &str = "emergence.json";
/// Node mass share level whose trajectory gets its own change-point.
pub const CHANGEPOINT_TOPK: usize = 20;

pub fn graph_file_name(step: u64) -> String {
    format!("graph_{step:08}.json")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimelineConfig {
    pub ig: IgConfig,
    pub metric: Metric,
    pub replacement: Replacement,
    pub stability_basis: StabilityBasis,
    /// Size of the top-node sets recorded for consolidation.
    pub top_nodes: usize,
}

impl Default for TimelineConfig {
    fn default() -> Self {
        TimelineConfig {
            ig: IgConfig::default(),
            metric: Metric::default(),
            replacement: Replacement::default(),
            stability_basis: StabilityBasis::default(),
            top_nodes: DEFAULT_CONSOLIDATION_K,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmergenceConfig {
    pub indispensability: IndispensabilityMode,
    pub drop_threshold: DropThreshold,
    pub consolidation_threshold: f64,
    pub consolidation_persistence: usize,
    pub min_segment: usize,
    pub n_boot: usize,
    pub seed: u64,
}

impl Default for EmergenceConfig {
    fn default() -> Self {
        EmergenceConfig {
            indispensability: IndispensabilityMode::default(),
            drop_threshold: DropThreshold::default(),
            consolidation_threshold: DEFAULT_CONSOLIDATION_THRESHOLD,
            consolidation_persistence: DEFAULT_CONSOLIDATION_PERSISTENCE,
            min_segment: DEFAULT_MIN_SEGMENT,
            n_boot: DEFAULT_BOOTSTRAP,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmergenceReport {
    pub version: u32,
    pub role: String,
    pub steps: Vec<u64>,
    pub config: EmergenceConfig,
    pub t_det: Option<u64>,
    pub t_ind: Option<u64>,
    pub t_cons: Option<u64>,
    /// Detectability threshold: mean plus two standard deviations of the
    /// first two faithfulness values.
    pub detectability: Option<Marker>,
    pub indispensability: Option<Marker>,
    pub changepoint_faithfulness: Option<ChangePoint>,
    pub changepoint_topk: Option<ChangePoint>,
    pub bootstrap_skipped: usize,
    /// Why a marker or change-point could not be computed.
    pub notes: Vec<String>,
}

impl EmergenceReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Everything measured at one checkpoint.
pub struct StepResult {
    pub graph: AttributionGraph,
    pub circuit: Circuit,
    pub m_full: f64,
    pub m_empty: f64,
    pub m_circuit: f64,
    pub m_without: f64,
    pub sparsity: SparsityReport,
    pub structural: StructuralReport,
    pub top_nodes: BTreeSet<NodeId>,
}

/// Attribution, circuit extraction, ablations and reports for one checkpoint.
pub fn analyze_step(
    ckpt: &Checkpoint,
    pairs: &[RoleCrossPair],
    cfg: &TimelineConfig,
) -> Result<StepResult> {
    let attr = aggregate_role(ckpt, pairs, &cfg.ig)?;
    let mut graph = score_graph(&ckpt.config, &attr.table, cfg.metric.name())?;
    let circuit = extract_circuit(&mut graph, cfg.ig.top_k_edges);
    let eval =
        |c: &Circuit, mode| ablated_eval(ckpt, pairs, &graph, c, mode, cfg.metric, cfg.replacement);
    let m_full = eval(&Circuit::full(&graph), AblationMode::ZeroOutOfCircuit)?;
    let m_empty = eval(&Circuit::empty(), AblationMode::ZeroOutOfCircuit)?;
    let m_circuit = eval(&circuit, AblationMode::ZeroOutOfCircuit)?;
    let m_without = eval(&circuit, AblationMode::ZeroInCircuit)?;
    let masses: Vec<f64> = node_mass(&graph, &circuit).into_values().collect();
    let sparsity = sparsity_report(&masses)?;
    let structural = structural_report(&graph, &circuit)?;
    let top_nodes = top_k_nodes(&graph, &circuit, cfg.top_nodes);
    Ok(StepResult {
        graph,
        circuit,
        m_full,
        m_empty,
        m_circuit,
        m_without,
        sparsity,
        structural,
        top_nodes,
    })
}

/// Runs [`analyze_step`] over checkpoints in order and assembles the
/// timeline. With `out_dir`, each graph file is written as soon as its
/// checkpoint finishes, so earlier results survive a later failure.
pub fn build_timeline(
    checkpoints: &[Checkpoint],
    pairs: &[RoleCrossPair],
    cfg: &TimelineConfig,
    out_dir: Option<&Path>,
) -> Result<(Timeline, Vec<AttributionGraph>)> {
    let first = checkpoints
        .first()
        .ok_or_else(|| Error::InvalidInput("no checkpoints to analyze".into()))?;
    let role = pairs
        .first()
        .ok_or_else(|| Error::InvalidInput("no pairs to analyze".into()))?
        .role_clean
        .clone();
    if checkpoints.windows(2).any(|w| w[0].step >= w[1].step) {
        return Err(Error::InvalidInput(
            "checkpoint steps must be strictly increasing".into(),
        ));
    }
    if let Some(c) = checkpoints.iter().find(|c| c.config != first.config) {
        return Err(Error::InvalidInput(format!(
            "checkpoint {} has config {} but checkpoint {} has {}",
            c.step,
            c.config.id(),
            first.step,
            first.config.id()
        )));
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut results = Vec::with_capacity(checkpoints.len());
    for ckpt in checkpoints {
        let step = ckpt.step;
        let at = |e: Error| Error::AtStep {
            step,
            source: Box::new(e),
        };
        let r = analyze_step(ckpt, pairs, cfg).map_err(at)?;
        if let Some(dir) = out_dir {
            export_graph(&r.graph, &dir.join(graph_file_name(step))).map_err(at)?;
        }
        tracing::info!(
            step,
            m_full = r.m_full,
            m_circuit = r.m_circuit,
            "checkpoint analyzed"
        );
        results.push(r);
    }

    let edge_sets: Vec<BTreeSet<EdgeKey>> =
        results.iter().map(|r| r.circuit.keys(&r.graph)).collect();
    let stability = match cfg.stability_basis {
        StabilityBasis::Edges => edge_sets
            .windows(2)
            .map(|w| jaccard(&w[0], &w[1]))
            .collect(),
        StabilityBasis::TopNodes => results
            .windows(2)
            .map(|w| jaccard(&w[0].top_nodes, &w[1].top_nodes))
            .collect(),
    };
    let faith = |r: &StepResult| {
        let d = r.m_full - r.m_empty;
        (d != 0.0).then(|| (r.m_circuit - r.m_empty) / d)
    };
    let timeline = Timeline {
        version: TIMELINE_FILE_VERSION,
        role,
        model_config_id: first.config.id(),
        metric: cfg.metric.name().to_string(),
        steps: checkpoints.iter().map(|c| c.step).collect(),
        faithfulness: results.iter().map(faith).collect(),
        m_full: results.iter().map(|r| r.m_full).collect(),
        m_empty: results.iter().map(|r| r.m_empty).collect(),
        m_circuit: results.iter().map(|r| r.m_circuit).collect(),
        m_without: results.iter().map(|r| r.m_without).collect(),
        stability,
        stability_basis: cfg.stability_basis,
        sparsity: results.iter().map(|r| r.sparsity.clone()).collect(),
        structural: results.iter().map(|r| r.structural.clone()).collect(),
        circuit_edges: edge_sets
            .into_iter()
            .map(|s| s.into_iter().collect())
            .collect(),
        top_nodes: results
            .iter()
            .map(|r| r.top_nodes.iter().copied().collect())
            .collect(),
    };
    if let Some(dir) = out_dir {
        let write = |name: &str, text: String| {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(p, e))
        };
        write(TIMELINE_JSON, timeline.to_json())?;
        write(TIMELINE_CSV, timeline.to_csv())?;
    }
    Ok((timeline, results.into_iter().map(|r| r.graph).collect()))
}

/// Emergence markers and change-points of a timeline. Markers that need
/// more checkpoints than the timeline has are left empty with a note.
pub fn emergence_report(timeline: &Timeline, cfg: &EmergenceConfig) -> Result<EmergenceReport> {
    timeline.validate()?;
    let steps = &timeline.steps;
    let mut notes = Vec::new();
    let mut note = |what: &str, e: Error| {
        notes.push(format!("{what}: {e}"));
    };

    let detectability = match detect_detectability(steps, &timeline.faithfulness) {
        Ok(m) => Some(m),
        Err(e) => {
            note("detectability", e);
            None
        }
    };
    let indispensability = match detect_indispensability(
        steps,
        &timeline.m_full,
        &timeline.m_without,
        &timeline.m_circuit,
        cfg.indispensability,
        cfg.drop_threshold,
    ) {
        Ok(m) => Some(m),
        Err(e) => {
            note("indispensability", e);
            None
        }
    };
    let consolidation_sets: Vec<BTreeSet<NodeId>> = timeline
        .top_nodes
        .iter()
        .map(|v| v.iter().copied().collect())
        .collect();
    let node_stability: Vec<f64> = consolidation_sets
        .windows(2)
        .map(|w| jaccard(&w[0], &w[1]))
        .collect();
    let t_cons = match consolidation_from_stability(
        steps,
        &node_stability,
        cfg.consolidation_threshold,
        cfg.consolidation_persistence,
    ) {
        Ok(t) => t,
        Err(e) => {
            note("consolidation", e);
            None
        }
    };

    let x: Vec<f64> = steps.iter().map(|s| *s as f64).collect();
    let mut skipped = 0;
    let mut fit = |name: &str, y: Option<Vec<f64>>| -> Option<ChangePoint> {
        let Some(y) = y else {
            notes.push(format!("{name} change-point: series has undefined values"));
            return None;
        };
        let seed = derive_seed(cfg.seed, &format!("changepoint/{name}"));
        match changepoint(&x, &y, cfg.n_boot, cfg.min_segment, seed) {
            Ok((cp, s)) => {
                skipped += s;
                Some(cp)
            }
            Err(e) => {
                notes.push(format!("{name} change-point: {e}"));
                None
            }
        }
    };
    let faith: Option<Vec<f64>> = timeline.faithfulness.iter().copied().collect();
    let changepoint_faithfulness = fit("faithfulness", faith);
    let topk =
        Some(timeline.topk_series(CHANGEPOINT_TOPK)).filter(|v| v.iter().all(|x| x.is_finite()));
    let changepoint_topk = fit("top-k mass", topk);

    Ok(EmergenceReport {
        version: REPORT_FILE_VERSION,
        role: timeline.role.clone(),
        steps: steps.clone(),
        config: cfg.clone(),
        t_det: detectability.and_then(|m| m.step),
        t_ind: indispensability.and_then(|m| m.step),
        t_cons,
        detectability,
        indispensability,
        changepoint_faithfulness,
        changepoint_topk,
        bootstrap_skipped: skipped,
        notes,
    })
}

pub struct CompassRun {
    pub timeline: Timeline,
    pub report: EmergenceReport,
    pub graphs: Vec<AttributionGraph>,
}

/// Timeline plus emergence report, with every artifact written to
/// `out_dir` when given.
pub fn run_compass(
    checkpoints: &[Checkpoint],
    pairs: &[RoleCrossPair],
    timeline_cfg: &TimelineConfig,
    emergence_cfg: &EmergenceConfig,
    out_dir: Option<&Path>,
) -> Result<CompassRun> {
    let (timeline, graphs) = build_timeline(checkpoints, pairs, timeline_cfg, out_dir)?;
    let report = emergence_report(&timeline, emergence_cfg)?;
    if let Some(dir) = out_dir {
        let p = dir.join(REPORT_JSON);
        fs::write(&p, report.to_json()).map_err(|e| Error::io(p, e))?;
    }
    Ok(CompassRun {
        timeline,
        report,
        graphs,
    })
}
