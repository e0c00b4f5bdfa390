//! Slot-level forward and reverse passes.
//!
//! Each destination module reads its own copy of the residual stream (a
//! slot), assembled edge by edge from upstream node outputs. Without an
//! intervention every slot equals the ordinary residual stream, so this is
//! the standard pre-norm transformer; with one, any subset of edges can be
//! zeroed or replaced by activations from another run. The reverse pass
//! yields parameter gradients and the gradient of the output with respect
//! to every slot input.

use super::config::{ModelConfig, PositionalScheme};
use super::params::Weights;
use crate::graph::Wiring;

const LN_EPS: f64 = 1e-5;

/// Edge-level intervention. Inactive edges contribute the replacement
/// activation of their source node (zero when no replacement is given).
/// An empty `active` slice leaves every edge active.
#[derive(Clone, Copy, Debug)]
pub struct Intervention<'a> {
    /// One flag per edge, in wiring order.
    pub active: &'a [bool],
    /// Node activations (`n_nodes × d_model`, dense node order).
    pub replacement: Option<&'a [f64]>,
    /// Optional `n_slots × d_model` offsets added to every slot input.
    pub slot_offset: Option<&'a [f64]>,
    /// Per-slot layer-norm scales to use instead of recomputing them.
    pub ln_rstd: Option<&'a [f64]>,
    /// Treat layer-norm scales as constants in the reverse pass.
    pub freeze_ln_grad: bool,
}

/// Everything the reverse pass needs from a forward pass.
#[derive(Clone, Debug)]
pub struct Trace {
    /// Node activations, `n_nodes × d_model`. Input nodes hold the
    /// embeddings, logits nodes their (pre-norm) residual input.
    pub z: Vec<f64>,
    pub slot_x: Vec<f64>,
    slot_xhat: Vec<f64>,
    pub slot_rstd: Vec<f64>,
    slot_proj: Vec<f64>,
    probs: Vec<f64>,
    head_o: Vec<f64>,
    mlp_pre: Vec<f64>,
    mlp_act: Vec<f64>,
    /// `seq_len × vocab`
    pub logits: Vec<f64>,
}

pub struct Gradients {
    pub params: Option<Weights>,
    /// `n_slots × d_model`, gradient w.r.t. each slot's pre-norm input.
    pub slots: Vec<f64>,
    /// `seq_len × d_model`, gradient w.r.t. the input embeddings.
    pub embeddings: Vec<f64>,
}

pub(crate) fn sinusoid(pos: usize, d: usize) -> Vec<f64> {
    (0..d)
        .map(|k| {
            let pair = (k / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / d as f64);
            if k % 2 == 0 {
                angle.sin()
            } else {
                angle.cos()
            }
        })
        .collect()
}

/// Token plus positional embedding, `tokens.len() × d_model`.
pub fn embed(cfg: &ModelConfig, w: &Weights, tokens: &[usize]) -> Vec<f64> {
    let d = cfg.d_model;
    let mut out = vec![0.0; tokens.len() * d];
    for (i, &t) in tokens.iter().enumerate() {
        let row = &mut out[i * d..(i + 1) * d];
        row.copy_from_slice(&w.tok_emb[t * d..(t + 1) * d]);
        match cfg.positional_scheme {
            PositionalScheme::Learned => {
                for (r, p) in row.iter_mut().zip(&w.pos_emb[i * d..(i + 1) * d]) {
                    *r += p;
                }
            }
            PositionalScheme::Sinusoidal => {
                for (r, p) in row.iter_mut().zip(sinusoid(i, d)) {
                    *r += p;
                }
            }
        }
    }
    out
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out = x · W + b` for `W: rows × cols` row-major.
fn affine(x: &[f64], w: &[f64], b: Option<&[f64]>, cols: usize, out: &mut [f64]) {
    match b {
        Some(b) => out.copy_from_slice(b),
        None => out.fill(0.0),
    }
    for (r, &xr) in x.iter().enumerate() {
        if xr == 0.0 {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += xr * wv;
        }
    }
}

/// Backprop through `out = x · W + b`: accumulates `dW`, `db` (when given)
/// and writes `dx`.
fn affine_back(
    x: &[f64],
    w: &[f64],
    dout: &[f64],
    cols: usize,
    dx: &mut [f64],
    grads: Option<(&mut [f64], Option<&mut [f64]>)>,
) {
    for (r, dxr) in dx.iter_mut().enumerate() {
        *dxr = dot(&w[r * cols..(r + 1) * cols], dout);
    }
    if let Some((dw, db)) = grads {
        for (r, &xr) in x.iter().enumerate() {
            if xr == 0.0 {
                continue;
            }
            let row = &mut dw[r * cols..(r + 1) * cols];
            for (g, &d) in row.iter_mut().zip(dout) {
                *g += xr * d;
            }
        }
        if let Some(db) = db {
            for (g, &d) in db.iter_mut().zip(dout) {
                *g += d;
            }
        }
    }
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let inner = C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

struct Dims {
    d: usize,
    dh: usize,
    dm: usize,
    h: usize,
    v: usize,
    t: usize,
}

impl Dims {
    fn new(cfg: &ModelConfig, wiring: &Wiring) -> Self {
        Dims {
            d: cfg.d_model,
            dh: cfg.d_head,
            dm: cfg.d_mlp,
            h: cfg.n_heads,
            v: cfg.vocab_size,
            t: wiring.seq_len,
        }
    }
}

/// Layer-norm forward into `xhat`; returns `1/std`. Linearized models skip
/// normalisation (`xhat = x`, reported `rstd = 1`).
fn ln_forward(x: &[f64], xhat: &mut [f64], linear: bool, fixed: Option<f64>) -> f64 {
    if linear {
        xhat.copy_from_slice(x);
        return 1.0;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let rstd = match fixed {
        Some(r) => r,
        None => {
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            1.0 / (var + LN_EPS).sqrt()
        }
    };
    for (o, &v) in xhat.iter_mut().zip(x) {
        *o = (v - mean) * rstd;
    }
    rstd
}

fn ln_apply(xhat: &[f64], g: &[f64], b: &[f64], y: &mut [f64], linear: bool) {
    if linear {
        y.copy_from_slice(xhat);
        return;
    }
    for k in 0..y.len() {
        y[k] = g[k] * xhat[k] + b[k];
    }
}

/// Backprop `dy` through `y = g * xhat + b` and the normalisation. Writes
/// `dx`; accumulates `dg`, `db`.
#[allow(clippy::too_many_arguments)]
fn ln_backward(
    xhat: &[f64],
    rstd: f64,
    g: &[f64],
    dy: &[f64],
    dx: &mut [f64],
    grads: Option<(&mut [f64], &mut [f64])>,
    linear: bool,
    frozen: bool,
) {
    if linear {
        dx.copy_from_slice(dy);
        return;
    }
    let n = dy.len() as f64;
    if let Some((dg, db)) = grads {
        for k in 0..dy.len() {
            dg[k] += dy[k] * xhat[k];
            db[k] += dy[k];
        }
    }
    let mut mean_d = 0.0;
    let mut mean_dx = 0.0;
    for k in 0..dy.len() {
        let dxh = dy[k] * g[k];
        mean_d += dxh;
        mean_dx += dxh * xhat[k];
    }
    mean_d /= n;
    mean_dx /= n;
    for k in 0..dy.len() {
        let dxh = dy[k] * g[k];
        dx[k] = if frozen {
            rstd * (dxh - mean_d)
        } else {
            rstd * (dxh - mean_d - xhat[k] * mean_dx)
        };
    }
}

/// Sums the (possibly intervened) contributions of a slot's sources.
fn gather(
    wiring: &Wiring,
    slot: usize,
    z: &[f64],
    iv: Option<&Intervention<'_>>,
    d: usize,
    out: &mut [f64],
) {
    out.fill(0.0);
    for e in wiring.slots[slot].edges.clone() {
        let src = wiring.edge_src[e];
        let value: Option<&[f64]> = match iv {
            Some(iv) if iv.active.is_empty() => Some(&z[src * d..(src + 1) * d]),
            Some(iv) if !iv.active[e] => iv.replacement.map(|r| &r[src * d..(src + 1) * d]),
            _ => Some(&z[src * d..(src + 1) * d]),
        };
        if let Some(v) = value {
            for (o, x) in out.iter_mut().zip(v) {
                *o += x;
            }
        }
    }
    if let Some(off) = iv.and_then(|iv| iv.slot_offset) {
        for (o, x) in out.iter_mut().zip(&off[slot * d..(slot + 1) * d]) {
            *o += x;
        }
    }
}

fn scatter(
    wiring: &Wiring,
    slot: usize,
    dx: &[f64],
    dz: &mut [f64],
    iv: Option<&Intervention<'_>>,
    d: usize,
) {
    for e in wiring.slots[slot].edges.clone() {
        if let Some(iv) = iv {
            if !iv.active.is_empty() && !iv.active[e] {
                continue;
            }
        }
        let src = wiring.edge_src[e];
        for (g, x) in dz[src * d..(src + 1) * d].iter_mut().zip(dx) {
            *g += x;
        }
    }
}

/// Runs the network on precomputed input embeddings (`seq_len × d_model`).
pub fn forward(
    cfg: &ModelConfig,
    w: &Weights,
    wiring: &Wiring,
    embeddings: &[f64],
    iv: Option<&Intervention<'_>>,
) -> Trace {
    let Dims { d, dh, dm, h, v, t } = Dims::new(cfg, wiring);
    let lin = cfg.linearized;
    let n_slots = wiring.slots.len();
    let mut tr = Trace {
        z: vec![0.0; wiring.n_nodes() * d],
        slot_x: vec![0.0; n_slots * d],
        slot_xhat: vec![0.0; n_slots * d],
        slot_rstd: vec![1.0; n_slots],
        slot_proj: vec![0.0; n_slots * dh],
        probs: vec![0.0; cfg.n_layers * h * t * t],
        head_o: vec![0.0; cfg.n_layers * h * t * dh],
        mlp_pre: vec![0.0; cfg.n_layers * t * dm],
        mlp_act: vec![0.0; cfg.n_layers * t * dm],
        logits: vec![0.0; t * v],
    };
    tr.z[..t * d].copy_from_slice(&embeddings[..t * d]);
    let mut y = vec![0.0; d];
    let scale = 1.0 / (dh as f64).sqrt();

    for (l, lw) in w.layers.iter().enumerate() {
        for hd in 0..h {
            let wq = &lw.w_q[hd * d * dh..(hd + 1) * d * dh];
            let wk = &lw.w_k[hd * d * dh..(hd + 1) * d * dh];
            let wv = &lw.w_v[hd * d * dh..(hd + 1) * d * dh];
            let bq = &lw.b_q[hd * dh..(hd + 1) * dh];
            let bk = &lw.b_k[hd * dh..(hd + 1) * dh];
            let bv = &lw.b_v[hd * dh..(hd + 1) * dh];
            for i in 0..t {
                // Q, then K and V for every attended position.
                let mut project = |slot: usize, wm: &[f64], bm: &[f64], tr: &mut Trace| {
                    let (x, xhat) = (
                        &mut tr.slot_x[slot * d..(slot + 1) * d],
                        &mut tr.slot_xhat[slot * d..(slot + 1) * d],
                    );
                    gather(wiring, slot, &tr.z, iv, d, x);
                    tr.slot_rstd[slot] =
                        ln_forward(x, xhat, lin, iv.and_then(|iv| iv.ln_rstd).map(|r| r[slot]));
                    ln_apply(xhat, &lw.ln1_g, &lw.ln1_b, &mut y, lin);
                    affine(
                        &y,
                        wm,
                        Some(bm),
                        dh,
                        &mut tr.slot_proj[slot * dh..(slot + 1) * dh],
                    );
                };
                project(wiring.q_slot(l, hd, i), wq, bq, &mut tr);
                for j in 0..=i {
                    project(wiring.k_slot(l, hd, i, j), wk, bk, &mut tr);
                    project(wiring.v_slot(l, hd, i, j), wv, bv, &mut tr);
                }

                let hn = (l * h + hd) * t + i;
                let probs = &mut tr.probs[hn * t..hn * t + i + 1];
                if lin {
                    probs.fill(1.0 / (i + 1) as f64);
                } else {
                    let qs = wiring.q_slot(l, hd, i);
                    let q = &tr.slot_proj[qs * dh..(qs + 1) * dh];
                    for (j, p) in probs.iter_mut().enumerate() {
                        let ks = wiring.k_slot(l, hd, i, j);
                        *p = dot(q, &tr.slot_proj[ks * dh..(ks + 1) * dh]) * scale;
                    }
                    let max = probs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for p in probs.iter_mut() {
                        *p = (*p - max).exp();
                        sum += *p;
                    }
                    for p in probs.iter_mut() {
                        *p /= sum;
                    }
                }
                let o = &mut tr.head_o[hn * dh..(hn + 1) * dh];
                o.fill(0.0);
                for j in 0..=i {
                    let vs = wiring.v_slot(l, hd, i, j);
                    let p = tr.probs[hn * t + j];
                    for (oo, vv) in o.iter_mut().zip(&tr.slot_proj[vs * dh..(vs + 1) * dh]) {
                        *oo += p * vv;
                    }
                }
                let node = wiring.node_index(&crate::graph::NodeId::head(l, hd, i));
                let wo = &lw.w_o[hd * dh * d..(hd + 1) * dh * d];
                let o = tr.head_o[hn * dh..(hn + 1) * dh].to_vec();
                affine(&o, wo, None, d, &mut tr.z[node * d..(node + 1) * d]);
            }
        }
        for i in 0..t {
            let slot = wiring.mlp_slot(l, i);
            {
                let (x, xhat) = (
                    &mut tr.slot_x[slot * d..(slot + 1) * d],
                    &mut tr.slot_xhat[slot * d..(slot + 1) * d],
                );
                gather(wiring, slot, &tr.z, iv, d, x);
                tr.slot_rstd[slot] =
                    ln_forward(x, xhat, lin, iv.and_then(|iv| iv.ln_rstd).map(|r| r[slot]));
                ln_apply(xhat, &lw.ln2_g, &lw.ln2_b, &mut y, lin);
            }
            let mn = l * t + i;
            let pre = &mut tr.mlp_pre[mn * dm..(mn + 1) * dm];
            affine(&y, &lw.w_in, Some(&lw.b_in), dm, pre);
            let act = &mut tr.mlp_act[mn * dm..(mn + 1) * dm];
            for (a, &p) in act.iter_mut().zip(pre.iter()) {
                *a = if lin { p } else { gelu(p) };
            }
            let node = wiring.node_index(&crate::graph::NodeId::mlp(l, i));
            affine(
                &tr.mlp_act[mn * dm..(mn + 1) * dm],
                &lw.w_out,
                Some(&lw.b_out),
                d,
                &mut tr.z[node * d..(node + 1) * d],
            );
        }
    }
    for i in 0..t {
        let slot = wiring.logits_slot(i);
        let (x, xhat) = (
            &mut tr.slot_x[slot * d..(slot + 1) * d],
            &mut tr.slot_xhat[slot * d..(slot + 1) * d],
        );
        gather(wiring, slot, &tr.z, iv, d, x);
        tr.slot_rstd[slot] =
            ln_forward(x, xhat, lin, iv.and_then(|iv| iv.ln_rstd).map(|r| r[slot]));
        ln_apply(xhat, &w.lnf_g, &w.lnf_b, &mut y, lin);
        affine(&y, &w.w_u, None, v, &mut tr.logits[i * v..(i + 1) * v]);
        let node = wiring.node_index(&crate::graph::NodeId::logits(cfg.n_layers, i));
        let x = tr.slot_x[slot * d..(slot + 1) * d].to_vec();
        tr.z[node * d..(node + 1) * d].copy_from_slice(&x);
    }
    tr
}

/// Reverse pass for an arbitrary upstream gradient on the logits
/// (`seq_len × vocab`). `want_params` controls parameter-gradient
/// accumulation; slot and embedding gradients are always produced.
pub fn backward(
    cfg: &ModelConfig,
    w: &Weights,
    wiring: &Wiring,
    tr: &Trace,
    dlogits: &[f64],
    iv: Option<&Intervention<'_>>,
    want_params: bool,
) -> Gradients {
    let Dims { d, dh, dm, h, v, t } = Dims::new(cfg, wiring);
    let lin = cfg.linearized;
    let frz = iv.is_some_and(|iv| iv.freeze_ln_grad);
    let mut gw = want_params.then(|| Weights::zeros(cfg));
    let mut dz = vec![0.0; wiring.n_nodes() * d];
    let mut dslot = vec![0.0; wiring.slots.len() * d];
    let mut y = vec![0.0; d];
    let mut dy = vec![0.0; d];

    for i in 0..t {
        let slot = wiring.logits_slot(i);
        let xhat = &tr.slot_xhat[slot * d..(slot + 1) * d];
        ln_apply(xhat, &w.lnf_g, &w.lnf_b, &mut y, lin);
        let dl = &dlogits[i * v..(i + 1) * v];
        affine_back(
            &y,
            &w.w_u,
            dl,
            v,
            &mut dy,
            gw.as_mut().map(|g| (g.w_u.as_mut_slice(), None)),
        );
        let dx = &mut dslot[slot * d..(slot + 1) * d];
        ln_backward(
            xhat,
            tr.slot_rstd[slot],
            &w.lnf_g,
            &dy,
            dx,
            gw.as_mut()
                .map(|g| (g.lnf_g.as_mut_slice(), g.lnf_b.as_mut_slice())),
            lin,
            frz,
        );
        scatter(
            wiring,
            slot,
            &dslot[slot * d..(slot + 1) * d],
            &mut dz,
            iv,
            d,
        );
    }

    let scale = 1.0 / (dh as f64).sqrt();
    let mut dact = vec![0.0; dm];
    let mut dpre = vec![0.0; dm];
    let mut dproj = vec![0.0; dh];
    let mut d_o = vec![0.0; dh];
    for l in (0..cfg.n_layers).rev() {
        let lw = &w.layers[l];
        for i in 0..t {
            let node = wiring.node_index(&crate::graph::NodeId::mlp(l, i));
            let dzn = dz[node * d..(node + 1) * d].to_vec();
            let mn = l * t + i;
            let act = &tr.mlp_act[mn * dm..(mn + 1) * dm];
            let pre = &tr.mlp_pre[mn * dm..(mn + 1) * dm];
            affine_back(
                act,
                &lw.w_out,
                &dzn,
                d,
                &mut dact,
                gw.as_mut().map(|g| {
                    let lg = &mut g.layers[l];
                    (lg.w_out.as_mut_slice(), Some(lg.b_out.as_mut_slice()))
                }),
            );
            for k in 0..dm {
                dpre[k] = if lin {
                    dact[k]
                } else {
                    dact[k] * gelu_grad(pre[k])
                };
            }
            let slot = wiring.mlp_slot(l, i);
            let xhat = &tr.slot_xhat[slot * d..(slot + 1) * d];
            ln_apply(xhat, &lw.ln2_g, &lw.ln2_b, &mut y, lin);
            affine_back(
                &y,
                &lw.w_in,
                &dpre,
                dm,
                &mut dy,
                gw.as_mut().map(|g| {
                    let lg = &mut g.layers[l];
                    (lg.w_in.as_mut_slice(), Some(lg.b_in.as_mut_slice()))
                }),
            );
            let dx = &mut dslot[slot * d..(slot + 1) * d];
            ln_backward(
                xhat,
                tr.slot_rstd[slot],
                &lw.ln2_g,
                &dy,
                dx,
                gw.as_mut().map(|g| {
                    let lg = &mut g.layers[l];
                    (lg.ln2_g.as_mut_slice(), lg.ln2_b.as_mut_slice())
                }),
                lin,
                frz,
            );
            scatter(
                wiring,
                slot,
                &dslot[slot * d..(slot + 1) * d],
                &mut dz,
                iv,
                d,
            );
        }

        for hd in 0..h {
            for i in 0..t {
                let node = wiring.node_index(&crate::graph::NodeId::head(l, hd, i));
                let dzn = dz[node * d..(node + 1) * d].to_vec();
                let hn = (l * h + hd) * t + i;
                let o = &tr.head_o[hn * dh..(hn + 1) * dh];
                affine_back(
                    o,
                    &lw.w_o[hd * dh * d..(hd + 1) * dh * d],
                    &dzn,
                    d,
                    &mut d_o,
                    gw.as_mut()
                        .map(|g| (&mut g.layers[l].w_o[hd * dh * d..(hd + 1) * dh * d], None)),
                );
                let probs = &tr.probs[hn * t..hn * t + i + 1];
                // dL/dp_j = d_o · v_j
                let mut dprobs = vec![0.0; i + 1];
                for (j, dp) in dprobs.iter_mut().enumerate() {
                    let vs = wiring.v_slot(l, hd, i, j);
                    *dp = dot(&d_o, &tr.slot_proj[vs * dh..(vs + 1) * dh]);
                }
                let mut dscores = vec![0.0; i + 1];
                if !lin {
                    let s: f64 = probs.iter().zip(&dprobs).map(|(p, g)| p * g).sum();
                    for ((ds, p), g) in dscores.iter_mut().zip(probs.iter()).zip(dprobs.iter()) {
                        *ds = p * (g - s);
                    }
                }

                let qs = wiring.q_slot(l, hd, i);
                let q = tr.slot_proj[qs * dh..(qs + 1) * dh].to_vec();
                // Query gradient.
                dproj.fill(0.0);
                for (j, &dsc) in dscores.iter().enumerate() {
                    let ks = wiring.k_slot(l, hd, i, j);
                    for (dq, k) in dproj.iter_mut().zip(&tr.slot_proj[ks * dh..(ks + 1) * dh]) {
                        *dq += dsc * k * scale;
                    }
                }
                let mut back_slot = |slot: usize,
                                     dproj: &[f64],
                                     which: usize,
                                     dslot: &mut [f64],
                                     dz: &mut [f64],
                                     gw: &mut Option<Weights>| {
                    let xhat = &tr.slot_xhat[slot * d..(slot + 1) * d];
                    ln_apply(xhat, &lw.ln1_g, &lw.ln1_b, &mut y, lin);
                    let (wm, grads) = match which {
                        0 => (
                            &lw.w_q,
                            gw.as_mut().map(|g| {
                                let lg = &mut g.layers[l];
                                (&mut lg.w_q, &mut lg.b_q)
                            }),
                        ),
                        1 => (
                            &lw.w_k,
                            gw.as_mut().map(|g| {
                                let lg = &mut g.layers[l];
                                (&mut lg.w_k, &mut lg.b_k)
                            }),
                        ),
                        _ => (
                            &lw.w_v,
                            gw.as_mut().map(|g| {
                                let lg = &mut g.layers[l];
                                (&mut lg.w_v, &mut lg.b_v)
                            }),
                        ),
                    };
                    affine_back(
                        &y,
                        &wm[hd * d * dh..(hd + 1) * d * dh],
                        dproj,
                        dh,
                        &mut dy,
                        grads.map(|(gwm, gbm)| {
                            (
                                &mut gwm[hd * d * dh..(hd + 1) * d * dh],
                                Some(&mut gbm[hd * dh..(hd + 1) * dh]),
                            )
                        }),
                    );
                    let dx = &mut dslot[slot * d..(slot + 1) * d];
                    ln_backward(
                        xhat,
                        tr.slot_rstd[slot],
                        &lw.ln1_g,
                        &dy,
                        dx,
                        gw.as_mut().map(|g| {
                            let lg = &mut g.layers[l];
                            (lg.ln1_g.as_mut_slice(), lg.ln1_b.as_mut_slice())
                        }),
                        lin,
                        frz,
                    );
                    scatter(wiring, slot, &dslot[slot * d..(slot + 1) * d], dz, iv, d);
                };
                back_slot(qs, &dproj.clone(), 0, &mut dslot, &mut dz, &mut gw);
                for j in 0..=i {
                    let ks = wiring.k_slot(l, hd, i, j);
                    let dk: Vec<f64> = q.iter().map(|qq| dscores[j] * qq * scale).collect();
                    back_slot(ks, &dk, 1, &mut dslot, &mut dz, &mut gw);
                    let vs = wiring.v_slot(l, hd, i, j);
                    let dv: Vec<f64> = d_o.iter().map(|g| probs[j] * g).collect();
                    back_slot(vs, &dv, 2, &mut dslot, &mut dz, &mut gw);
                }
            }
        }
    }

    let embeddings = dz[..t * d].to_vec();
    Gradients {
        params: gw,
        slots: dslot,
        embeddings,
    }
}

/// Adds embedding-table gradients for `tokens` given the gradient with
/// respect to the input embeddings.
pub fn accumulate_embedding_grads(
    cfg: &ModelConfig,
    grads: &mut Weights,
    tokens: &[usize],
    d_emb: &[f64],
) {
    let d = cfg.d_model;
    for (i, &tok) in tokens.iter().enumerate() {
        let g = &d_emb[i * d..(i + 1) * d];
        for (a, b) in grads.tok_emb[tok * d..(tok + 1) * d].iter_mut().zip(g) {
            *a += b;
        }
        if cfg.positional_scheme == PositionalScheme::Learned {
            for (a, b) in grads.pos_emb[i * d..(i + 1) * d].iter_mut().zip(g) {
                *a += b;
            }
        }
    }
}
