//! Edge scores from source deltas and path-averaged slot gradients, plus
//! the exact single-edge patching effects they approximate.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{normalize, EdgeScoreTable, IgConfig, Orientation};
use crate::dataset::RoleCrossPair;
use crate::error::{Error, Result};
use crate::graph::{NodeId, Wiring};
use crate::model::engine::{self, Intervention};
use crate::model::{target_loss, CachedRun, Checkpoint, LossKind};

pub type SourceDeltas = BTreeMap<NodeId, Vec<f64>>;

/// Per-node activation differences between two runs.
pub fn source_deltas(
    clean: &CachedRun,
    corrupt: &CachedRun,
    orientation: Orientation,
) -> Result<SourceDeltas> {
    if clean.tokens.len() != corrupt.tokens.len()
        || clean.activations.len() != corrupt.activations.len()
    {
        return Err(Error::Shape(format!(
            "runs of length {} and {} cannot be compared",
            clean.tokens.len(),
            corrupt.tokens.len()
        )));
    }
    let sign = match orientation {
        Orientation::CleanMinusCorrupt => 1.0,
        Orientation::CorruptMinusClean => -1.0,
    };
    clean
        .activations
        .iter()
        .zip(corrupt.activations.iter())
        .map(|((na, za), (nb, zb))| {
            if na != nb {
                return Err(Error::Shape(format!(
                    "node {na} has no counterpart (found {nb})"
                )));
            }
            Ok((
                *na,
                za.iter().zip(zb).map(|(a, b)| sign * (a - b)).collect(),
            ))
        })
        .collect()
}

fn check_pair(ckpt: &Checkpoint, pair: &RoleCrossPair) -> Result<usize> {
    let cfg = &ckpt.config;
    let t = pair.clean_tokens.len();
    if pair.corrupt_tokens.len() != t {
        return Err(Error::InvalidInput(format!(
            "pair violates token parity ({} vs {} tokens)",
            t,
            pair.corrupt_tokens.len()
        )));
    }
    crate::model::forward(ckpt, &pair.clean_tokens)?;
    crate::model::forward(ckpt, &pair.corrupt_tokens)?;
    if pair.target_clean >= cfg.vocab_size {
        return Err(Error::TokenOutOfRange {
            id: pair.target_clean,
            vocab_size: cfg.vocab_size,
        });
    }
    Ok(t)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Integrated-gradient edge scores for one pair.
pub fn eap_ig_scores(
    ckpt: &Checkpoint,
    pair: &RoleCrossPair,
    cfg: &IgConfig,
) -> Result<EdgeScoreTable> {
    cfg.validate()?;
    let t = check_pair(ckpt, pair)?;
    let mc = &ckpt.config;
    let d = mc.d_model;
    let wiring = Wiring::new(mc.n_layers, mc.n_heads, t);
    let emb_clean = engine::embed(mc, &ckpt.weights, &pair.clean_tokens);
    let emb_corrupt = engine::embed(mc, &ckpt.weights, &pair.corrupt_tokens);
    let clean = engine::forward(mc, &ckpt.weights, &wiring, &emb_clean, None);
    let z_clean = &clean.z;
    let z_corrupt = engine::forward(mc, &ckpt.weights, &wiring, &emb_corrupt, None).z;
    let sign = match cfg.orientation {
        Orientation::CleanMinusCorrupt => 1.0,
        Orientation::CorruptMinusClean => -1.0,
    };
    let delta: Vec<f64> = z_clean
        .iter()
        .zip(&z_corrupt)
        .map(|(a, b)| sign * (a - b))
        .collect();

    // Layer-norm scales pinned to the clean run.
    let iv = Intervention {
        active: &[],
        replacement: None,
        slot_offset: None,
        ln_rstd: Some(&clean.slot_rstd),
        freeze_ln_grad: true,
    };
    let mut gbar = vec![0.0; wiring.slots.len() * d];
    for k in 1..=cfg.m {
        let alpha = k as f64 / cfg.m as f64;
        let x: Vec<f64> = emb_corrupt
            .iter()
            .zip(&emb_clean)
            .map(|(r, c)| r + alpha * (c - r))
            .collect();
        let (_, g) = crate::model::slot_grads_from_embeddings(
            ckpt,
            &wiring,
            &x,
            pair.target_clean,
            cfg.loss,
            Some(&iv),
        )
        .map_err(|e| match e {
            Error::NonFinite { location } => Error::NonFinite {
                location: format!("interpolation step {k} (alpha {alpha}): {location}"),
            },
            other => other,
        })?;
        for (a, b) in gbar.iter_mut().zip(g) {
            *a += b;
        }
    }
    let scale = cfg.loss_scale / cfg.m as f64;
    gbar.iter_mut().for_each(|g| *g *= scale);

    let n = wiring.n_edges();
    let mut raw = Vec::with_capacity(n);
    let mut norm_product = Vec::with_capacity(n);
    for e in 0..n {
        let src = wiring.edge_src[e];
        let slot = wiring.edges[e].1;
        let du = &delta[src * d..(src + 1) * d];
        let gv = &gbar[slot * d..(slot + 1) * d];
        raw.push(dot(du, gv));
        norm_product.push(norm(du) * norm(gv));
    }
    let mut table = EdgeScoreTable {
        normalized: vec![0.0; n],
        raw,
        norm_product,
        normalization: None,
        all_zero: false,
        checkpoint_step: ckpt.step,
        role: pair.role_clean.clone(),
        n_pairs: 1,
        seq_len: t,
    };
    normalize(&mut table, cfg.normalization, cfg.epsilon)?;
    Ok(table)
}

/// Exact effect of each edge: clean-target loss on the clean prompt minus
/// the same loss with that single edge carrying its source's corrupt
/// activation. Layer-norm scales are held at their clean values.
pub fn patch_effects(ckpt: &Checkpoint, pair: &RoleCrossPair, loss: LossKind) -> Result<Vec<f64>> {
    let t = check_pair(ckpt, pair)?;
    let mc = &ckpt.config;
    let v = mc.vocab_size;
    let wiring = Wiring::new(mc.n_layers, mc.n_heads, t);
    let emb_clean = engine::embed(mc, &ckpt.weights, &pair.clean_tokens);
    let emb_corrupt = engine::embed(mc, &ckpt.weights, &pair.corrupt_tokens);
    let z_corrupt = engine::forward(mc, &ckpt.weights, &wiring, &emb_corrupt, None).z;
    let clean = engine::forward(mc, &ckpt.weights, &wiring, &emb_clean, None);
    let l_clean = target_loss(&clean.logits[(t - 1) * v..], pair.target_clean, loss).0;
    Ok((0..wiring.n_edges())
        .into_par_iter()
        .map(|e| {
            let mut active = vec![true; wiring.n_edges()];
            active[e] = false;
            let iv = Intervention {
                active: &active,
                replacement: Some(&z_corrupt),
                slot_offset: None,
                ln_rstd: Some(&clean.slot_rstd),
                freeze_ln_grad: false,
            };
            let tr = engine::forward(mc, &ckpt.weights, &wiring, &emb_clean, Some(&iv));
            l_clean - target_loss(&tr.logits[(t - 1) * v..], pair.target_clean, loss).0
        })
        .collect())
}
