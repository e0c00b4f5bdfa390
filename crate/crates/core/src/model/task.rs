//! Task-level entry points: cached runs, the role-conditioned next-token
//! loss and accuracy, per-slot gradients and edge ablation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::ModelConfig;
use super::engine::{self, Intervention};
use crate::dataset::RoleCrossPair;
use crate::error::{Error, Result};
use crate::graph::{AttributionGraph, Circuit, NodeId, Wiring};

/// Loss on the final-position prediction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Negative log-probability of the target.
    #[default]
    CrossEntropy,
    /// Negative target logit.
    Logit,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Next-token accuracy on the clean target.
    Accuracy,
    /// Negative cross-entropy of the clean target.
    #[default]
    NegLoss,
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::Accuracy => "cnp_accuracy",
            Metric::NegLoss => "neg_cnp_loss",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Clean,
    Corrupt,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    /// Keep only circuit edges.
    ZeroOutOfCircuit,
    /// Remove circuit edges, keep the rest.
    ZeroInCircuit,
}

/// What an ablated edge carries instead of its source's output.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Replacement {
    #[default]
    Zero,
    /// The source's activation on the corrupt prompt.
    Corrupt,
}

/// Node outputs of one run, indexed by [`NodeId`]. Logits nodes hold the
/// residual stream they read.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeActivations {
    nodes: Vec<NodeId>,
    d_model: usize,
    data: Vec<f64>,
}

impl NodeActivations {
    pub(crate) fn new(wiring: &Wiring, d_model: usize, data: Vec<f64>) -> Self {
        NodeActivations {
            nodes: wiring.nodes(),
            d_model,
            data,
        }
    }

    pub fn get(&self, node: &NodeId) -> Option<&[f64]> {
        let i = self.nodes.binary_search(node).ok()?;
        Some(&self.data[i * self.d_model..(i + 1) * self.d_model])
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NodeId, &[f64])> {
        self.nodes.iter().zip(self.data.chunks(self.d_model))
    }

    /// Dense `n_nodes × d_model` buffer in wiring order.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

#[derive(Clone, Debug)]
pub struct CachedRun {
    pub tokens: Vec<usize>,
    pub activations: NodeActivations,
    /// `seq_len × vocab`, row-major.
    pub logits: Vec<f64>,
    pub vocab_size: usize,
    /// Mean next-token cross-entropy over the sequence (0 for length 1).
    pub loss: f64,
}

impl CachedRun {
    pub fn final_logits(&self) -> &[f64] {
        let t = self.tokens.len();
        &self.logits[(t - 1) * self.vocab_size..t * self.vocab_size]
    }
}

/// Per-slot gradients of the final-position loss.
#[derive(Clone, Debug)]
pub struct PreactGrads {
    pub wiring: Wiring,
    pub d_model: usize,
    /// `n_slots × d_model`
    pub slots: Vec<f64>,
    pub loss: f64,
}

impl PreactGrads {
    pub fn slot(&self, index: usize) -> &[f64] {
        &self.slots[index * self.d_model..(index + 1) * self.d_model]
    }
}

pub(crate) fn check_tokens(cfg: &ModelConfig, tokens: &[usize]) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::InvalidInput("empty token sequence".into()));
    }
    if tokens.len() > cfg.max_seq_len {
        return Err(Error::SequenceTooLong {
            len: tokens.len(),
            max: cfg.max_seq_len,
        });
    }
    if let Some(&id) = tokens.iter().find(|&&t| t >= cfg.vocab_size) {
        return Err(Error::TokenOutOfRange {
            id,
            vocab_size: cfg.vocab_size,
        });
    }
    Ok(())
}

fn log_softmax_at(row: &[f64], target: usize) -> (f64, Vec<f64>) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|x| (x - max).exp()).sum();
    let lse = max + sum.ln();
    let probs = row.iter().map(|x| (x - lse).exp()).collect();
    (row[target] - lse, probs)
}

/// Loss of one logit row and its gradient with respect to that row.
pub fn target_loss(row: &[f64], target: usize, kind: LossKind) -> (f64, Vec<f64>) {
    match kind {
        LossKind::CrossEntropy => {
            let (logp, mut grad) = log_softmax_at(row, target);
            grad[target] -= 1.0;
            (-logp, grad)
        }
        LossKind::Logit => {
            let mut grad = vec![0.0; row.len()];
            grad[target] = -1.0;
            (-row[target], grad)
        }
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

fn sequence_loss(logits: &[f64], tokens: &[usize], v: usize) -> f64 {
    if tokens.len() < 2 {
        return 0.0;
    }
    let total: f64 = (0..tokens.len() - 1)
        .map(|i| -log_softmax_at(&logits[i * v..(i + 1) * v], tokens[i + 1]).0)
        .sum();
    total / (tokens.len() - 1) as f64
}

pub(crate) fn run_trace(
    ckpt: &Checkpoint,
    wiring: &Wiring,
    tokens: &[usize],
    iv: Option<&Intervention<'_>>,
) -> engine::Trace {
    let emb = engine::embed(&ckpt.config, &ckpt.weights, tokens);
    engine::forward(&ckpt.config, &ckpt.weights, wiring, &emb, iv)
}

/// Logits (`seq_len × vocab`) without keeping activations.
pub fn forward(ckpt: &Checkpoint, tokens: &[usize]) -> Result<Vec<f64>> {
    check_tokens(&ckpt.config, tokens)?;
    let wiring = Wiring::new(ckpt.config.n_layers, ckpt.config.n_heads, tokens.len());
    Ok(run_trace(ckpt, &wiring, tokens, None).logits)
}

pub fn forward_cached(ckpt: &Checkpoint, tokens: &[usize]) -> Result<CachedRun> {
    check_tokens(&ckpt.config, tokens)?;
    let wiring = Wiring::new(ckpt.config.n_layers, ckpt.config.n_heads, tokens.len());
    Ok(cached_with(ckpt, &wiring, tokens, None))
}

pub(crate) fn cached_with(
    ckpt: &Checkpoint,
    wiring: &Wiring,
    tokens: &[usize],
    iv: Option<&Intervention<'_>>,
) -> CachedRun {
    let tr = run_trace(ckpt, wiring, tokens, iv);
    let v = ckpt.config.vocab_size;
    CachedRun {
        tokens: tokens.to_vec(),
        loss: sequence_loss(&tr.logits, tokens, v),
        activations: NodeActivations::new(wiring, ckpt.config.d_model, tr.z),
        logits: tr.logits,
        vocab_size: v,
    }
}

/// Negative log-probability of `target` at the final position.
pub fn cnp_loss(run: &CachedRun, target: usize) -> Result<f64> {
    if target >= run.vocab_size {
        return Err(Error::TokenOutOfRange {
            id: target,
            vocab_size: run.vocab_size,
        });
    }
    Ok(
        target_loss(run.final_logits(), target, LossKind::CrossEntropy)
            .0
            .max(0.0),
    )
}

fn predicts(ckpt: &Checkpoint, tokens: &[usize], target: usize) -> Result<bool> {
    let logits = forward(ckpt, tokens)?;
    let v = ckpt.config.vocab_size;
    Ok(argmax(&logits[(tokens.len() - 1) * v..]) == target)
}

/// Fraction of pairs whose argmax next token matches the chosen side's
/// target (both sides for [`Side::Both`]).
pub fn cnp_accuracy(ckpt: &Checkpoint, pairs: &[RoleCrossPair], side: Side) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidInput(
            "accuracy over an empty pair list".into(),
        ));
    }
    let hits = pairs
        .par_iter()
        .map(|p| -> Result<bool> {
            Ok(match side {
                Side::Clean => predicts(ckpt, &p.clean_tokens, p.target_clean)?,
                Side::Corrupt => predicts(ckpt, &p.corrupt_tokens, p.target_corrupt)?,
                Side::Both => {
                    predicts(ckpt, &p.clean_tokens, p.target_clean)?
                        && predicts(ckpt, &p.corrupt_tokens, p.target_corrupt)?
                }
            })
        })
        .collect::<Result<Vec<bool>>>()?;
    Ok(hits.iter().filter(|&&h| h).count() as f64 / pairs.len() as f64)
}

/// Loss on `target` at the final position and its gradient with respect to
/// every slot input, starting from explicit input embeddings.
pub(crate) fn slot_grads_from_embeddings(
    ckpt: &Checkpoint,
    wiring: &Wiring,
    embeddings: &[f64],
    target: usize,
    kind: LossKind,
    iv: Option<&Intervention<'_>>,
) -> Result<(f64, Vec<f64>)> {
    let cfg = &ckpt.config;
    let tr = engine::forward(cfg, &ckpt.weights, wiring, embeddings, iv);
    let (t, v) = (wiring.seq_len, cfg.vocab_size);
    let (loss, grow) = target_loss(&tr.logits[(t - 1) * v..], target, kind);
    let mut dlogits = vec![0.0; t * v];
    dlogits[(t - 1) * v..].copy_from_slice(&grow);
    let grads = engine::backward(cfg, &ckpt.weights, wiring, &tr, &dlogits, iv, false);
    let d = cfg.d_model;
    if let Some(bad) = grads
        .slots
        .chunks(d)
        .position(|g| g.iter().any(|x| !x.is_finite()))
    {
        let slot = &wiring.slots[bad];
        return Err(Error::NonFinite {
            location: format!(
                "gradient at {} ({} slot, position {})",
                slot.dst,
                slot.kind.as_str(),
                slot.src_pos
            ),
        });
    }
    Ok((loss, grads.slots))
}

/// Gradient of the final-position loss with respect to every slot input.
pub fn grad_preactivation(
    ckpt: &Checkpoint,
    tokens: &[usize],
    target: usize,
    kind: LossKind,
) -> Result<PreactGrads> {
    check_tokens(&ckpt.config, tokens)?;
    if target >= ckpt.config.vocab_size {
        return Err(Error::TokenOutOfRange {
            id: target,
            vocab_size: ckpt.config.vocab_size,
        });
    }
    let wiring = Wiring::new(ckpt.config.n_layers, ckpt.config.n_heads, tokens.len());
    let emb = engine::embed(&ckpt.config, &ckpt.weights, tokens);
    let (loss, slots) = slot_grads_from_embeddings(ckpt, &wiring, &emb, target, kind, None)?;
    Ok(PreactGrads {
        wiring,
        d_model: ckpt.config.d_model,
        slots,
        loss,
    })
}

pub(crate) fn common_seq_len(pairs: &[RoleCrossPair]) -> Result<usize> {
    let first = pairs
        .first()
        .ok_or_else(|| Error::InvalidInput("empty pair list".into()))?;
    let t = first.clean_tokens.len();
    if pairs
        .iter()
        .any(|p| p.clean_tokens.len() != t || p.corrupt_tokens.len() != t)
    {
        return Err(Error::InvalidInput(
            "pairs have differing sequence lengths".into(),
        ));
    }
    Ok(t)
}

pub(crate) fn metric_value(row: &[f64], target: usize, metric: Metric) -> f64 {
    match metric {
        Metric::Accuracy => f64::from(u8::from(argmax(row) == target)),
        Metric::NegLoss => -target_loss(row, target, LossKind::CrossEntropy).0,
    }
}

/// Task metric on the clean prompts with a subset of edges ablated. With
/// every edge active this runs exactly the unablated computation.
/// Layer-norm scales are held at the values of the unablated clean run.
pub fn ablated_eval(
    ckpt: &Checkpoint,
    pairs: &[RoleCrossPair],
    graph: &AttributionGraph,
    circuit: &Circuit,
    mode: AblationMode,
    metric: Metric,
    replacement: Replacement,
) -> Result<f64> {
    let t = common_seq_len(pairs)?;
    let wiring = Wiring::new(ckpt.config.n_layers, ckpt.config.n_heads, t);
    graph.check_wiring(&wiring)?;
    if graph.model_config_id != ckpt.config.id() {
        return Err(Error::Shape(format!(
            "graph built for {} but checkpoint is {}",
            graph.model_config_id,
            ckpt.config.id()
        )));
    }
    if let Some(&e) = circuit.edges.iter().next_back() {
        if e >= wiring.n_edges() {
            return Err(Error::Shape(format!(
                "circuit edge {e} outside a graph of {} edges",
                wiring.n_edges()
            )));
        }
    }
    let mut active = circuit.mask(wiring.n_edges());
    if mode == AblationMode::ZeroInCircuit {
        active.iter_mut().for_each(|a| *a = !*a);
    }
    let values = pairs
        .par_iter()
        .map(|p| -> Result<f64> {
            check_tokens(&ckpt.config, &p.clean_tokens)?;
            let corrupt;
            let rep = match replacement {
                Replacement::Zero => None,
                Replacement::Corrupt => {
                    check_tokens(&ckpt.config, &p.corrupt_tokens)?;
                    corrupt = run_trace(ckpt, &wiring, &p.corrupt_tokens, None).z;
                    Some(corrupt.as_slice())
                }
            };
            let clean = run_trace(ckpt, &wiring, &p.clean_tokens, None);
            let iv = Intervention {
                active: &active,
                replacement: rep,
                slot_offset: None,
                ln_rstd: Some(&clean.slot_rstd),
                freeze_ln_grad: false,
            };
            let tr = run_trace(ckpt, &wiring, &p.clean_tokens, Some(&iv));
            let v = ckpt.config.vocab_size;
            Ok(metric_value(
                &tr.logits[(t - 1) * v..],
                p.target_clean,
                metric,
            ))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::build_graph;
    use crate::model::init_model;

    fn ckpt() -> Checkpoint {
        init_model(&ModelConfig::tiny(2, 2, 8, 16), 3).unwrap()
    }

    fn run_with_final(row: Vec<f64>) -> CachedRun {
        let v = row.len();
        CachedRun {
            tokens: vec![0],
            activations: NodeActivations {
                nodes: vec![],
                d_model: 1,
                data: vec![],
            },
            logits: row,
            vocab_size: v,
            loss: 0.0,
        }
    }

    #[test]
    fn cnp_loss_reference_values() {
        let half = run_with_final(vec![0.0, 0.0]);
        assert!((cnp_loss(&half, 0).unwrap() - 2f64.ln()).abs() < 1e-9);
        let uniform = run_with_final(vec![1.5; 64]);
        assert!((cnp_loss(&uniform, 17).unwrap() - 64f64.ln()).abs() < 1e-9);
        let forced = run_with_final(vec![0.0, 1e6, 0.0]);
        assert_eq!(cnp_loss(&forced, 1).unwrap(), 0.0);
        assert!(cnp_loss(&forced, 3).is_err());
    }

    #[test]
    fn cross_entropy_gradient_sums_to_zero() {
        let row = [0.3, -1.2, 2.0, 0.7, 0.0];
        let (_, g) = target_loss(&row, 2, LossKind::CrossEntropy);
        assert!(g.iter().sum::<f64>().abs() < 1e-9);
    }

    #[test]
    fn caching_is_observation_only() {
        let c = ckpt();
        let tokens = [3, 1, 4, 1, 5];
        let run = forward_cached(&c, &tokens).unwrap();
        assert_eq!(run.logits, forward(&c, &tokens).unwrap());
    }

    #[test]
    fn residual_accounting() {
        let c = ckpt();
        let tokens = [3, 1, 4, 1, 5];
        let run = forward_cached(&c, &tokens).unwrap();
        let d = c.config.d_model;
        for i in 0..tokens.len() {
            let mut sum = vec![0.0; d];
            for (node, z) in run.activations.iter() {
                if node.position == i && node.kind != crate::graph::NodeKind::Logits {
                    sum.iter_mut().zip(z).for_each(|(s, x)| *s += x);
                }
            }
            let resid = run.activations.get(&NodeId::logits(2, i)).unwrap();
            for k in 0..d {
                assert!((sum[k] - resid[k]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn single_token_run_caches_every_node() {
        let c = ckpt();
        let run = forward_cached(&c, &[7]).unwrap();
        assert_eq!(run.activations.len(), 1 + 2 * 2 + 2 + 1);
        assert!(run
            .activations
            .iter()
            .all(|(_, z)| z.iter().all(|x| x.is_finite())));
    }

    #[test]
    fn rejects_out_of_vocab() {
        assert!(matches!(
            forward_cached(&ckpt(), &[1, 99]),
            Err(Error::TokenOutOfRange { id: 99, .. })
        ));
    }

    #[test]
    fn zero_unembed_kills_gradients() {
        let mut c = ckpt();
        c.weights.w_u.fill(0.0);
        let g = grad_preactivation(&c, &[1, 2, 3], 4, LossKind::CrossEntropy).unwrap();
        assert!(g.slots.iter().all(|&x| x == 0.0));
    }

    fn pair(clean: Vec<usize>, corrupt: Vec<usize>, yc: usize, yr: usize) -> RoleCrossPair {
        RoleCrossPair {
            clean_text: String::new(),
            corrupt_text: String::new(),
            clean_tokens: clean,
            corrupt_tokens: corrupt,
            target_clean: yc,
            target_corrupt: yr,
            role_clean: "a".into(),
            role_corrupt: "b".into(),
        }
    }

    fn predicted(c: &Checkpoint, tokens: &[usize]) -> usize {
        let l = forward(c, tokens).unwrap();
        let v = c.config.vocab_size;
        argmax(&l[(tokens.len() - 1) * v..])
    }

    #[test]
    fn accuracy_sides() {
        let c = ckpt();
        let (a, b, x) = (vec![1, 2, 3], vec![1, 2, 4], vec![5, 6, 7]);
        let pa = predicted(&c, &a);
        let pb = predicted(&c, &b);
        let px = predicted(&c, &x);
        let pairs = vec![
            pair(a.clone(), b.clone(), pa, pb),
            pair(x.clone(), b.clone(), px, (pb + 1) % 16),
        ];
        assert_eq!(cnp_accuracy(&c, &pairs, Side::Clean).unwrap(), 1.0);
        assert_eq!(cnp_accuracy(&c, &pairs, Side::Corrupt).unwrap(), 0.5);
        assert_eq!(cnp_accuracy(&c, &pairs, Side::Both).unwrap(), 0.5);
        assert!(cnp_accuracy(&c, &[], Side::Both).is_err());
    }

    #[test]
    fn ablation_endpoints() {
        let c = ckpt();
        let pairs = vec![
            pair(vec![1, 2, 3], vec![1, 2, 4], 5, 6),
            pair(vec![2, 2, 3], vec![2, 2, 9], 7, 6),
        ];
        let g = build_graph(&c.config, 3).unwrap();
        let full: f64 = pairs
            .iter()
            .map(|p| {
                let l = forward(&c, &p.clean_tokens).unwrap();
                metric_value(&l[2 * 16..], p.target_clean, Metric::NegLoss)
            })
            .sum::<f64>()
            / 2.0;
        let all = Circuit::full(&g);
        let m_e = ablated_eval(
            &c,
            &pairs,
            &g,
            &all,
            AblationMode::ZeroOutOfCircuit,
            Metric::NegLoss,
            Replacement::Zero,
        )
        .unwrap();
        assert!((m_e - full).abs() <= 1e-12);
        let none = ablated_eval(
            &c,
            &pairs,
            &g,
            &Circuit::empty(),
            AblationMode::ZeroInCircuit,
            Metric::NegLoss,
            Replacement::Zero,
        )
        .unwrap();
        assert_eq!(none, m_e);
        let null = ablated_eval(
            &c,
            &pairs,
            &g,
            &Circuit::empty(),
            AblationMode::ZeroOutOfCircuit,
            Metric::NegLoss,
            Replacement::Zero,
        )
        .unwrap();
        let null2 = ablated_eval(
            &c,
            &pairs,
            &g,
            &all,
            AblationMode::ZeroInCircuit,
            Metric::NegLoss,
            Replacement::Zero,
        )
        .unwrap();
        assert_eq!(null, null2);
        let wrong = build_graph(&c.config, 4).unwrap();
        assert!(matches!(
            ablated_eval(
                &c,
                &pairs,
                &wrong,
                &all,
                AblationMode::ZeroOutOfCircuit,
                Metric::NegLoss,
                Replacement::Zero
            ),
            Err(Error::Shape(_))
        ));
    }
}
