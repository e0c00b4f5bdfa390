//! One function per subcommand. Each resolves its settings, runs the
//! library pipeline and writes its outputs plus `manifest.json`.
//!
//! Seeds: `gen-data` draws role `r` from `derive_seed(seed, "gen-data/r")`
//! and its paraphrases from `derive_seed(seed, "paraphrase/r")`; `train`
//! builds its corpus from `derive_seed(seed, "corpus")` and initialises and
//! batches from `derive_seed(seed, "train")`; `emerge` bootstraps from
//! `derive_seed(seed, "emerge")`. The other commands are deterministic
//! functions of their inputs.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use clap::Args;
use rolecirc_core::attribution::{
    aggregate_role, extract_circuit, faithfulness, score_graph, IgConfig, Normalization,
};
use rolecirc_core::dataset::{
    dataset_stats, filter_dual_correct, generate_pairs, generate_paraphrase_controls, load_pairs,
    pairs_to_jsonl, pairs_with_modal_length, synth_corpus, RoleCrossPair,
};
use rolecirc_core::emergence::{
    build_timeline, emergence_report, DropThreshold, EmergenceConfig, IndispensabilityMode,
    StabilityBasis, Timeline, TimelineConfig, REPORT_JSON, TIMELINE_CSV, TIMELINE_JSON,
};
use rolecirc_core::graph::{export_causal_flow, export_graph, import_graph, select_flow_edges};
use rolecirc_core::metrics::similarity_report;
use rolecirc_core::model::{
    list_checkpoints, load_checkpoint, train as train_model, Checkpoint, LossKind, Metric,
    ModelConfig, Optimizer, PositionalScheme, Replacement, Schedule,
};
use rolecirc_core::rng::derive_seed;
use serde::{Deserialize, Serialize};

use crate::grid::{default_grid, log_grid};
use crate::manifest::RunManifest;
use crate::{Global, InputError, OutDir};

pub const PAIRS_FILE: &str = "pairs.jsonl";
pub const PARAPHRASE_FILE: &str = "paraphrase.jsonl";
pub const STATS_FILE: &str = "stats.csv";
pub const GRAPH_FILE: &str = "graph.json";
pub const HEATMAP_FILE: &str = "heatmap.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SIMILARITY_FILE: &str = "similarity.json";
pub const FLOW_FILE: &str = "flow.dot";

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    let p = dir.join(name);
    fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
}

fn to_json(v: &impl Serialize) -> String {
    serde_json::to_string_pretty(v).expect("value serializes") + "\n"
}

// ---------------------------------------------------------------- gen-data

#[derive(Args)]
pub struct GenDataArgs {
    #[command(flatten)]
    out: OutDir,
    #[command(flatten)]
    flags: GenDataFlags,
}

#[derive(Args, Serialize)]
struct GenDataFlags {
    /// Roles to generate, comma-separated (default: every role)
    #[arg(long, value_delimiter = ',')]
    roles: Option<Vec<String>>,
    /// Pairs per role [default: 1000]
    #[arg(long)]
    n: Option<usize>,
    /// Also write within-role paraphrase controls
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    paraphrase: Option<bool>,
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GenDataConfig {
    roles: Vec<String>,
    n: usize,
    paraphrase: bool,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        GenDataConfig {
            roles: Vec::new(),
            n: 1000,
            paraphrase: false,
        }
    }
}

pub fn gen_data(g: &Global, args: GenDataArgs) -> Result<()> {
    let file = g.settings("gen-data")?;
    let seed = g.seed(&file);
    let mut cfg: GenDataConfig = crate::settings::resolve(&file, &args.flags)?;
    let (inv, source) = g.inventory()?;
    if cfg.roles.is_empty() {
        cfg.roles = inv.roles().iter().map(|r| r.to_string()).collect();
    }
    let out = args.out.create()?;

    let mut all = Vec::new();
    let mut controls = Vec::new();
    let mut rows = Vec::new();
    for role in &cfg.roles {
        let generated = generate_pairs(
            &inv,
            role,
            cfg.n,
            derive_seed(seed, &format!("gen-data/{role}")),
        )?;
        if generated.exhausted {
            tracing::warn!(
                role = role.as_str(),
                found = generated.pairs.len(),
                requested = cfg.n,
                attempts = generated.attempts,
                "patience exhausted before enough distinct pairs were found"
            );
        }
        let n_controls = if cfg.paraphrase {
            let para = generate_paraphrase_controls(
                &generated.pairs,
                &inv,
                derive_seed(seed, &format!("paraphrase/{role}")),
            )?;
            if !para.skipped.is_empty() {
                tracing::warn!(
                    role = role.as_str(),
                    skipped = para.skipped.len(),
                    "pairs without an alternative scaffold"
                );
            }
            let n = para.pairs.len();
            controls.extend(para.pairs);
            Some(n)
        } else {
            None
        };
        let stats = dataset_stats(&generated.pairs);
        rows.push((role.clone(), stats, n_controls));
        all.extend(generated.pairs);
    }

    write(out, PAIRS_FILE, &pairs_to_jsonl(&all, &inv.tokenizer)?)?;
    if cfg.paraphrase {
        write(
            out,
            PARAPHRASE_FILE,
            &pairs_to_jsonl(&controls, &inv.tokenizer)?,
        )?;
    }
    let mut table = String::from("role,pairs,parity_rate,leakage_rate,paraphrase_controls\n");
    for (role, s, c) in &rows {
        let _ = writeln!(
            table,
            "{role},{},{},{},{}",
            s.n_pairs,
            s.parity_rate,
            s.leakage_rate,
            c.map(|c| c.to_string()).unwrap_or_default()
        );
    }
    write(out, STATS_FILE, &table)?;
    print!("{table}");

    let mut manifest = RunManifest::new("gen-data", seed, cfg);
    manifest.inventory = Some(source);
    for p in g.inventory_files() {
        manifest.input(&p)?;
    }
    manifest.write(out)
}

// ------------------------------------------------------------------- train

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    out: OutDir,
    #[command(flatten)]
    flags: TrainFlags,
}

#[derive(Args, Serialize)]
struct TrainFlags {
    /// Optimizer steps [default: 2000]
    #[arg(long)]
    steps: Option<u64>,
    /// Explicit checkpoint steps, comma-separated
    #[arg(long, value_delimiter = ',', conflicts_with = "n_checkpoints")]
    checkpoints: Option<Vec<u64>>,
    /// Number of log-spaced checkpoints (step 0, then 8 up to --steps)
    #[arg(long)]
    n_checkpoints: Option<usize>,
    /// Layers [default: 2]
    #[arg(long)]
    layers: Option<usize>,
    /// Attention heads per layer [default: 4]
    #[arg(long)]
    heads: Option<usize>,
    /// Residual width [default: 40]
    #[arg(long)]
    d_model: Option<usize>,
    /// MLP hidden width [default: 4 x d-model]
    #[arg(long)]
    d_mlp: Option<usize>,
    /// learned or sinusoidal [default: learned]
    #[arg(long)]
    positional: Option<String>,
    /// Learning rate [default: 0.003]
    #[arg(long)]
    lr: Option<f64>,
    /// Sequences per step [default: 16]
    #[arg(long)]
    batch_size: Option<usize>,
    /// adam or sgd [default: adam]
    #[arg(long)]
    optimizer: Option<String>,
    /// Synthetic corpus size in documents [default: 4000]
    #[arg(long)]
    docs: Option<usize>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum OptimizerName {
    Adam,
    Sgd,
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainConfig {
    steps: u64,
    checkpoints: Option<Vec<u64>>,
    n_checkpoints: Option<usize>,
    layers: usize,
    heads: usize,
    d_model: usize,
    d_mlp: Option<usize>,
    positional: PositionalScheme,
    lr: f64,
    batch_size: usize,
    optimizer: OptimizerName,
    docs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            checkpoints: None,
            n_checkpoints: None,
            layers: 2,
            heads: 4,
            d_model: 40,
            d_mlp: None,
            positional: PositionalScheme::Learned,
            lr: 3e-3,
            batch_size: 16,
            optimizer: OptimizerName::Adam,
            docs: 4000,
        }
    }
}

pub fn train(g: &Global, args: TrainArgs) -> Result<()> {
    let mut file = g.settings("train")?;
    if args.flags.checkpoints.is_some() || args.flags.n_checkpoints.is_some() {
        file.section.remove("checkpoints");
        file.section.remove("n_checkpoints");
    }
    let seed = g.seed(&file);
    let mut cfg: TrainConfig = crate::settings::resolve(&file, &args.flags)?;
    let grid = match (&cfg.checkpoints, cfg.n_checkpoints) {
        (Some(c), _) => {
            let mut c = c.clone();
            c.sort_unstable();
            c.dedup();
            c
        }
        (None, Some(n)) => log_grid(cfg.steps, n),
        (None, None) => default_grid(cfg.steps),
    };
    cfg.checkpoints = Some(grid.clone());
    cfg.n_checkpoints = None;
    let d_mlp = *cfg.d_mlp.get_or_insert(4 * cfg.d_model);
    if cfg.heads == 0 || !cfg.d_model.is_multiple_of(cfg.heads) {
        return Err(InputError(format!(
            "d-model {} is not divisible by {} heads",
            cfg.d_model, cfg.heads
        ))
        .into());
    }

    let (inv, source) = g.inventory()?;
    let mut model = ModelConfig::tiny(
        cfg.layers,
        cfg.heads,
        cfg.d_model,
        inv.tokenizer.vocab_size(),
    );
    model.d_mlp = d_mlp;
    model.positional_scheme = cfg.positional;
    model.validate()?;
    let docs = synth_corpus(&inv, cfg.docs, derive_seed(seed, "corpus"));
    let corpus = docs
        .iter()
        .map(|d| inv.tokenizer.tokenize(d))
        .collect::<rolecirc_core::Result<Vec<_>>>()?;
    let schedule = Schedule {
        total_steps: cfg.steps,
        checkpoint_steps: grid,
        lr: cfg.lr,
        batch_size: cfg.batch_size,
        optimizer: match cfg.optimizer {
            OptimizerName::Adam => Optimizer::adam(),
            OptimizerName::Sgd => Optimizer::Sgd,
        },
    };
    let out = args.out.create()?;
    tracing::info!(
        params = model.n_params(),
        model = model.id().as_str(),
        steps = cfg.steps,
        "training"
    );
    let ckpts = train_model(
        &model,
        &corpus,
        &schedule,
        derive_seed(seed, "train"),
        Some(out),
    )?;
    println!(
        "wrote {} checkpoints ({} parameters) to {}",
        ckpts.len(),
        model.n_params(),
        out.display()
    );

    let mut manifest = RunManifest::new("train", seed, cfg);
    manifest.derived = Some(serde_json::json!({
        "model": model,
        "n_params": model.n_params(),
    }));
    manifest.inventory = Some(source);
    for p in g.inventory_files() {
        manifest.input(&p)?;
    }
    manifest.write(out)
}

// -------------------------------------------------------- pair selection

/// Restricts `pairs` to one role, keeps those `ckpt` predicts correctly on
/// both sides, then the most common sequence length, then the first
/// `max_pairs`.
fn select_pairs(
    pairs: Vec<RoleCrossPair>,
    role: &mut Option<String>,
    ckpt: &Checkpoint,
    max_pairs: Option<usize>,
) -> Result<Vec<RoleCrossPair>> {
    let roles: BTreeSet<&str> = pairs.iter().map(|p| p.role_clean.as_str()).collect();
    let chosen = match role.as_deref() {
        Some(r) if roles.contains(r) => r.to_string(),
        Some(r) => {
            return Err(InputError(format!(
                "pairs file has no pairs of role {r:?} (roles: {})",
                roles.iter().copied().collect::<Vec<_>>().join(", ")
            ))
            .into())
        }
        None if roles.len() == 1 => roles.iter().next().unwrap().to_string(),
        None => {
            return Err(InputError(format!(
                "pairs file holds several roles ({}); pick one with --role",
                roles.iter().copied().collect::<Vec<_>>().join(", ")
            ))
            .into())
        }
    };
    let of_role: Vec<RoleCrossPair> = pairs
        .into_iter()
        .filter(|p| p.role_clean == chosen)
        .collect();
    let n_role = of_role.len();
    let correct = filter_dual_correct(&of_role, ckpt)?;
    let mut kept = pairs_with_modal_length(&correct);
    if let Some(m) = max_pairs {
        kept.truncate(m);
    }
    tracing::info!(
        role = chosen.as_str(),
        step = ckpt.step,
        of_role = n_role,
        dual_correct = correct.len(),
        used = kept.len(),
        "pairs selected"
    );
    if kept.is_empty() {
        return Err(anyhow!(
            "no {chosen} pair is predicted correctly on both sides by the checkpoint at step {}",
            ckpt.step
        ));
    }
    *role = Some(chosen);
    Ok(kept)
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum LossName {
    #[default]
    CrossEntropy,
    Logit,
}

fn ig_config(m: usize, topk: usize, normalization: Normalization, loss: LossName) -> IgConfig {
    IgConfig {
        m,
        top_k_edges: topk,
        normalization,
        loss: match loss {
            LossName::CrossEntropy => LossKind::CrossEntropy,
            LossName::Logit => LossKind::Logit,
        },
        ..IgConfig::default()
    }
}

// --------------------------------------------------------------- attribute

#[derive(Args)]
pub struct AttributeArgs {
    /// Checkpoint file
    #[arg(long)]
    checkpoint: PathBuf,
    /// Pairs file from gen-data
    #[arg(long)]
    pairs: PathBuf,
    #[command(flatten)]
    out: OutDir,
    #[command(flatten)]
    flags: AttributeFlags,
}

#[derive(Args, Serialize)]
struct AttributeFlags {
    /// Role to attribute (required when the pairs file holds several)
    #[arg(long)]
    role: Option<String>,
    /// Integrated-gradient steps [default: 5]
    #[arg(long)]
    m: Option<usize>,
    /// Circuit size in edges [default: 200]
    #[arg(long)]
    topk: Option<usize>,
    /// total_mass or cosine [default: total_mass]
    #[arg(long)]
    normalization: Option<String>,
    /// cross_entropy or logit [default: cross_entropy]
    #[arg(long)]
    loss: Option<String>,
    /// accuracy or neg_loss, for faithfulness [default: neg_loss]
    #[arg(long)]
    metric: Option<String>,
    /// zero or corrupt ablation [default: zero]
    #[arg(long)]
    replacement: Option<String>,
    /// Use at most this many filtered pairs
    #[arg(long)]
    max_pairs: Option<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct AttributeConfig {
    role: Option<String>,
    m: usize,
    topk: usize,
    normalization: Normalization,
    loss: LossName,
    metric: Metric,
    replacement: Replacement,
    max_pairs: Option<usize>,
}

impl Default for AttributeConfig {
    fn default() -> Self {
        let ig = IgConfig::default();
        AttributeConfig {
            role: None,
            m: ig.m,
            topk: ig.top_k_edges,
            normalization: ig.normalization,
            loss: LossName::default(),
            metric: Metric::default(),
            replacement: Replacement::default(),
            max_pairs: None,
        }
    }
}

#[derive(Serialize)]
struct AttributeSummary {
    role: String,
    checkpoint_step: u64,
    n_pairs: usize,
    circuit_edges: usize,
    metric: String,
    faithfulness: Option<f64>,
    m_full: Option<f64>,
    m_empty: Option<f64>,
    m_circuit: Option<f64>,
    note: Option<String>,
}

pub fn attribute(g: &Global, args: AttributeArgs) -> Result<()> {
    let file = g.settings("attribute")?;
    let seed = g.seed(&file);
    let mut cfg: AttributeConfig = crate::settings::resolve(&file, &args.flags)?;
    let (inv, source) = g.inventory()?;
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let pairs = load_pairs(&args.pairs, &inv)?;
    let pairs = select_pairs(pairs, &mut cfg.role, &ckpt, cfg.max_pairs)?;
    let ig = ig_config(cfg.m, cfg.topk, cfg.normalization, cfg.loss);
    ig.validate()?;

    let attr = aggregate_role(&ckpt, &pairs, &ig)?;
    let mut graph = score_graph(&ckpt.config, &attr.table, cfg.metric.name())?;
    let circuit = extract_circuit(&mut graph, cfg.topk);
    let out = args.out.create()?;
    export_graph(&graph, &out.join(GRAPH_FILE))?;
    write(out, HEATMAP_FILE, &attr.heatmap.to_csv())?;

    let role = cfg.role.clone().unwrap_or_default();
    let mut summary = AttributeSummary {
        role,
        checkpoint_step: ckpt.step,
        n_pairs: pairs.len(),
        circuit_edges: circuit.len(),
        metric: cfg.metric.name().to_string(),
        faithfulness: None,
        m_full: None,
        m_empty: None,
        m_circuit: None,
        note: None,
    };
    match faithfulness(&ckpt, &graph, &circuit, &pairs, cfg.metric, cfg.replacement) {
        Ok(f) => {
            summary.faithfulness = Some(f.value);
            summary.m_full = Some(f.m_full);
            summary.m_empty = Some(f.m_empty);
            summary.m_circuit = Some(f.m_circuit);
        }
        Err(e @ rolecirc_core::Error::UndefinedFaithfulness { .. }) => {
            summary.note = Some(e.to_string());
        }
        Err(e) => return Err(e.into()),
    }
    write(out, SUMMARY_FILE, &to_json(&summary))?;
    println!(
        "{} pairs, {} circuit edges, faithfulness {}",
        summary.n_pairs,
        summary.circuit_edges,
        summary
            .faithfulness
            .map(|f| format!("{f:.4}"))
            .unwrap_or_else(|| "undefined".into())
    );

    let mut manifest = RunManifest::new("attribute", seed, cfg);
    manifest.inventory = Some(source);
    manifest.input(&args.checkpoint)?;
    manifest.input(&args.pairs)?;
    for p in g.inventory_files() {
        manifest.input(&p)?;
    }
    manifest.write(out)
}

// ---------------------------------------------------------------- timeline

#[derive(Args)]
pub struct TimelineArgs {
    /// Directory of checkpoints written by `train`
    #[arg(long)]
    checkpoints: PathBuf,
    /// Pairs file from gen-data
    #[arg(long)]
    pairs: PathBuf,
    #[command(flatten)]
    out: OutDir,
    #[command(flatten)]
    flags: TimelineFlags,
}

#[derive(Args, Serialize)]
struct TimelineFlags {
    /// Role to track (required when the pairs file holds several)
    #[arg(long)]
    role: Option<String>,
    /// Integrated-gradient steps [default: 5]
    #[arg(long)]
    m: Option<usize>,
    /// Circuit size in edges [default: 200]
    #[arg(long)]
    topk: Option<usize>,
    /// total_mass or cosine [default: total_mass]
    #[arg(long)]
    normalization: Option<String>,
    /// cross_entropy or logit [default: cross_entropy]
    #[arg(long)]
    loss: Option<String>,
    /// accuracy or neg_loss [default: neg_loss]
    #[arg(long)]
    metric: Option<String>,
    /// zero or corrupt ablation [default: zero]
    #[arg(long)]
    replacement: Option<String>,
    /// edges or top_nodes [default: edges]
    #[arg(long)]
    stability_basis: Option<String>,
    /// Size of the per-step top-node sets [default: 20]
    #[arg(long)]
    top_nodes: Option<usize>,
    /// Use at most this many filtered pairs
    #[arg(long)]
    max_pairs: Option<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TimelineSettings {
    role: Option<String>,
    m: usize,
    topk: usize,
    normalization: Normalization,
    loss: LossName,
    metric: Metric,
    replacement: Replacement,
    stability_basis: StabilityBasis,
    top_nodes: usize,
    max_pairs: Option<usize>,
}

impl Default for TimelineSettings {
    fn default() -> Self {
        let t = TimelineConfig::default();
        TimelineSettings {
            role: None,
            m: t.ig.m,
            topk: t.ig.top_k_edges,
            normalization: t.ig.normalization,
            loss: LossName::default(),
            metric: t.metric,
            replacement: t.replacement,
            stability_basis: t.stability_basis,
            top_nodes: t.top_nodes,
            max_pairs: None,
        }
    }
}

pub fn timeline(g: &Global, args: TimelineArgs) -> Result<()> {
    let file = g.settings("timeline")?;
    let seed = g.seed(&file);
    let mut cfg: TimelineSettings = crate::settings::resolve(&file, &args.flags)?;
    let (inv, source) = g.inventory()?;
    let listed = list_checkpoints(&args.checkpoints)?;
    let ckpts = listed
        .iter()
        .map(|(_, p)| load_checkpoint(p))
        .collect::<rolecirc_core::Result<Vec<_>>>()?;
    let reference = ckpts.last().expect("listing is never empty");
    let pairs = load_pairs(&args.pairs, &inv)?;
    let pairs = select_pairs(pairs, &mut cfg.role, reference, cfg.max_pairs)?;
    let tcfg = TimelineConfig {
        ig: ig_config(cfg.m, cfg.topk, cfg.normalization, cfg.loss),
        metric: cfg.metric,
        replacement: cfg.replacement,
        stability_basis: cfg.stability_basis,
        top_nodes: cfg.top_nodes,
    };
    tcfg.ig.validate()?;
    let out = args.out.create()?;
    let (tl, _) = build_timeline(&ckpts, &pairs, &tcfg, Some(out))?;
    println!(
        "{} checkpoints, {} pairs; wrote {TIMELINE_JSON} and {TIMELINE_CSV}",
        tl.steps.len(),
        pairs.len()
    );

    let mut manifest = RunManifest::new("timeline", seed, cfg);
    manifest.inventory = Some(source);
    for (_, p) in &listed {
        manifest.input(p)?;
    }
    manifest.input(&args.pairs)?;
    for p in g.inventory_files() {
        manifest.input(&p)?;
    }
    manifest.write(out)
}

// ------------------------------------------------------------------ emerge

#[derive(Args)]
pub struct EmergeArgs {
    /// timeline.json written by `timeline`
    #[arg(long)]
    timeline: PathBuf,
    #[command(flatten)]
    out: OutDir,
    #[command(flatten)]
    flags: EmergeFlags,
}

#[derive(Args, Serialize)]
struct EmergeFlags {
    /// Indispensability rule: drop or sign [default: drop]
    #[arg(long)]
    mode: Option<String>,
    /// Fixed drop threshold instead of the early-checkpoint baseline
    #[arg(long)]
    drop_threshold: Option<f64>,
    /// Minimum checkpoints per change-point segment [default: 3]
    #[arg(long)]
    min_seg: Option<usize>,
    /// Bootstrap replicates [default: 1000]
    #[arg(long)]
    boot: Option<usize>,
    /// Consolidation Jaccard threshold [default: 0.6]
    #[arg(long)]
    threshold: Option<f64>,
    /// Consecutive stable comparisons for consolidation [default: 2]
    #[arg(long)]
    persistence: Option<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EmergeSettings {
    mode: IndispensabilityMode,
    drop_threshold: Option<f64>,
    min_seg: usize,
    boot: usize,
    threshold: f64,
    persistence: usize,
}

impl Default for EmergeSettings {
    fn default() -> Self {
        let e = EmergenceConfig::default();
        EmergeSettings {
            mode: e.indispensability,
            drop_threshold: None,
            min_seg: e.min_segment,
            boot: e.n_boot,
            threshold: e.consolidation_threshold,
            persistence: e.consolidation_persistence,
        }
    }
}

pub fn emerge(g: &Global, args: EmergeArgs) -> Result<()> {
    let file = g.settings("emerge")?;
    let seed = g.seed(&file);
    let cfg: EmergeSettings = crate::settings::resolve(&file, &args.flags)?;
    if cfg.boot == 0 || cfg.min_seg == 0 || cfg.persistence == 0 {
        return Err(InputError("boot, min-seg and persistence must be at least 1".into()).into());
    }
    let text = fs::read_to_string(&args.timeline)
        .map_err(|e| InputError(format!("cannot read {}: {e}", args.timeline.display())))?;
    let tl = Timeline::from_json(&text, &args.timeline.display().to_string())?;
    let ecfg = EmergenceConfig {
        indispensability: cfg.mode,
        drop_threshold: cfg
            .drop_threshold
            .map_or(DropThreshold::Baseline, DropThreshold::Fixed),
        consolidation_threshold: cfg.threshold,
        consolidation_persistence: cfg.persistence,
        min_segment: cfg.min_seg,
        n_boot: cfg.boot,
        seed: derive_seed(seed, "emerge"),
    };
    let report = emergence_report(&tl, &ecfg)?;
    let out = args.out.create()?;
    write(out, REPORT_JSON, &report.to_json())?;
    let show = |t: Option<u64>| t.map(|s| s.to_string()).unwrap_or_else(|| "-".into());
    println!(
        "{}: t_det {}, t_ind {}, t_cons {}",
        report.role,
        show(report.t_det),
        show(report.t_ind),
        show(report.t_cons)
    );
    for n in &report.notes {
        tracing::warn!("{n}");
    }

    let mut manifest = RunManifest::new("emerge", seed, cfg);
    manifest.input(&args.timeline)?;
    manifest.write(out)
}

// ----------------------------------------------------------------- compare

#[derive(Args)]
pub struct CompareArgs {
    /// First graph file
    graph_a: PathBuf,
    /// Second graph file
    graph_b: PathBuf,
    #[command(flatten)]
    out: OutDir,
    #[command(flatten)]
    flags: CompareFlags,
}

#[derive(Args, Serialize)]
struct CompareFlags {
    /// Nodes per graph for node overlap [default: 30]
    #[arg(long)]
    topk_nodes: Option<usize>,
    /// Module-level edges per graph for edge overlap [default: 30]
    #[arg(long)]
    topk_edges: Option<usize>,
    /// Edges kept for the spectral comparison [default: 50]
    #[arg(long)]
    spectral_edges: Option<usize>,
    /// Laplacian eigenvalues compared [default: 20]
    #[arg(long)]
    eigs: Option<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct CompareSettings {
    topk_nodes: usize,
    topk_edges: usize,
    spectral_edges: usize,
    eigs: usize,
}

impl Default for CompareSettings {
    fn default() -> Self {
        use rolecirc_core::metrics::{
            DEFAULT_EIGENVALUES, DEFAULT_SPECTRAL_EDGES, DEFAULT_TOP_EDGES, DEFAULT_TOP_NODES,
        };
        CompareSettings {
            topk_nodes: DEFAULT_TOP_NODES,
            topk_edges: DEFAULT_TOP_EDGES,
            spectral_edges: DEFAULT_SPECTRAL_EDGES,
            eigs: DEFAULT_EIGENVALUES,
        }
    }
}

pub fn compare(g: &Global, args: CompareArgs) -> Result<()> {
    let file = g.settings("compare")?;
    let seed = g.seed(&file);
    let cfg: CompareSettings = crate::settings::resolve(&file, &args.flags)?;
    let a = import_graph(&args.graph_a)?;
    let b = import_graph(&args.graph_b)?;
    let report = similarity_report(
        &a,
        &b,
        cfg.topk_nodes,
        cfg.topk_edges,
        cfg.spectral_edges,
        cfg.eigs,
    )?;
    let out = args.out.create()?;
    write(out, SIMILARITY_FILE, &to_json(&report))?;
    println!(
        "node jaccard {:.4}, edge jaccard {:.4}, spectral distance {:.4}",
        report.node_jaccard, report.edge_jaccard, report.spectral_distance
    );

    let mut manifest = RunManifest::new("compare", seed, cfg);
    manifest.input(&args.graph_a)?;
    manifest.input(&args.graph_b)?;
    manifest.write(out)
}

// ------------------------------------------------------------------ render

#[derive(Args)]
pub struct RenderArgs {
    /// Graph file
    graph: PathBuf,
    #[command(flatten)]
    out: OutDir,
    #[command(flatten)]
    flags: RenderFlags,
}

#[derive(Args, Serialize)]
struct RenderFlags {
    /// Keep circuit edges at or above this quantile of |score| [default: 0.95]
    #[arg(long)]
    quantile: Option<f64>,
    /// Lower the threshold until at least this many edges show [default: 12]
    #[arg(long)]
    min_edges: Option<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RenderSettings {
    quantile: f64,
    min_edges: usize,
}

impl Default for RenderSettings {
    fn default() -> Self {
        RenderSettings {
            quantile: 0.95,
            min_edges: 12,
        }
    }
}

pub fn render(g: &Global, args: RenderArgs) -> Result<()> {
    let file = g.settings("render")?;
    let seed = g.seed(&file);
    let cfg: RenderSettings = crate::settings::resolve(&file, &args.flags)?;
    let graph = import_graph(&args.graph)?;
    let kept = select_flow_edges(&graph, cfg.quantile, cfg.min_edges)?;
    let dot = export_causal_flow(&graph, cfg.quantile, cfg.min_edges)?;
    let out = args.out.create()?;
    write(out, FLOW_FILE, &dot)?;
    println!("{} edges drawn", kept.len());

    let mut manifest = RunManifest::new("render", seed, cfg);
    manifest.input(&args.graph)?;
    manifest.write(out)
}
