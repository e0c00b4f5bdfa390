//! Parameter storage: typed per-layer weights with a flat, name-keyed view
//! for serialization, optimizers and gradient checks.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::{ModelConfig, PositionalScheme};
use crate::rng::rng_for;

#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights {
    pub ln1_g: Vec<f64>,
    pub ln1_b: Vec<f64>,
    /// `[head][d_model][d_head]`
    pub w_q: Vec<f64>,
    /// `[head][d_head]`
    pub b_q: Vec<f64>,
    pub w_k: Vec<f64>,
    pub b_k: Vec<f64>,
    pub w_v: Vec<f64>,
    pub b_v: Vec<f64>,
    /// `[head][d_head][d_model]`
    pub w_o: Vec<f64>,
    pub ln2_g: Vec<f64>,
    pub ln2_b: Vec<f64>,
    /// `[d_model][d_mlp]`
    pub w_in: Vec<f64>,
    pub b_in: Vec<f64>,
    /// `[d_mlp][d_model]`
    pub w_out: Vec<f64>,
    pub b_out: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Weights {
    /// `[vocab][d_model]`
    pub tok_emb: Vec<f64>,
    /// `[max_seq_len][d_model]`, empty for sinusoidal positions.
    pub pos_emb: Vec<f64>,
    pub layers: Vec<LayerWeights>,
    pub lnf_g: Vec<f64>,
    pub lnf_b: Vec<f64>,
    /// `[d_model][vocab]`
    pub w_u: Vec<f64>,
}

impl Weights {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let (d, dh, dm, h, v) = (
            cfg.d_model,
            cfg.d_head,
            cfg.d_mlp,
            cfg.n_heads,
            cfg.vocab_size,
        );
        let layer = LayerWeights {
            ln1_g: vec![0.0; d],
            ln1_b: vec![0.0; d],
            w_q: vec![0.0; h * d * dh],
            b_q: vec![0.0; h * dh],
            w_k: vec![0.0; h * d * dh],
            b_k: vec![0.0; h * dh],
            w_v: vec![0.0; h * d * dh],
            b_v: vec![0.0; h * dh],
            w_o: vec![0.0; h * dh * d],
            ln2_g: vec![0.0; d],
            ln2_b: vec![0.0; d],
            w_in: vec![0.0; d * dm],
            b_in: vec![0.0; dm],
            w_out: vec![0.0; dm * d],
            b_out: vec![0.0; d],
        };
        let pos = match cfg.positional_scheme {
            PositionalScheme::Learned => cfg.max_seq_len * d,
            PositionalScheme::Sinusoidal => 0,
        };
        Weights {
            tok_emb: vec![0.0; v * d],
            pos_emb: vec![0.0; pos],
            layers: vec![layer; cfg.n_layers],
            lnf_g: vec![0.0; d],
            lnf_b: vec![0.0; d],
            w_u: vec![0.0; d * v],
        }
    }

    /// Seeded initialisation: unit-variance embeddings, N(0, 1/fan_in) matrices,
    /// a small unembedding so the initial softmax is close to uniform,
    /// unit layer-norm gains and zero biases.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = rng_for(seed, "init");
        let mut w = Weights::zeros(cfg);
        let (d, dh, dm) = (cfg.d_model as f64, cfg.d_head as f64, cfg.d_mlp as f64);
        fill(&mut w.tok_emb, 1.0, &mut rng);
        fill(&mut w.pos_emb, 1.0, &mut rng);
        for layer in &mut w.layers {
            layer.ln1_g.fill(1.0);
            layer.ln2_g.fill(1.0);
            fill(&mut layer.w_q, 1.0 / d.sqrt(), &mut rng);
            fill(&mut layer.w_k, 1.0 / d.sqrt(), &mut rng);
            fill(&mut layer.w_v, 1.0 / d.sqrt(), &mut rng);
            fill(&mut layer.w_o, 1.0 / dh.sqrt(), &mut rng);
            fill(&mut layer.w_in, 1.0 / d.sqrt(), &mut rng);
            fill(&mut layer.w_out, 1.0 / dm.sqrt(), &mut rng);
        }
        w.lnf_g.fill(1.0);
        fill(&mut w.w_u, 0.2 / d.sqrt(), &mut rng);
        w
    }

    /// Visits every tensor as `(name, shape, data)` in a fixed order.
    pub fn visit(&self, cfg: &ModelConfig, mut f: impl FnMut(String, Vec<usize>, &[f64])) {
        let (d, dh, dm, h, v) = (
            cfg.d_model,
            cfg.d_head,
            cfg.d_mlp,
            cfg.n_heads,
            cfg.vocab_size,
        );
        f("embed.tok".into(), vec![v, d], &self.tok_emb);
        if !self.pos_emb.is_empty() {
            f("embed.pos".into(), vec![cfg.max_seq_len, d], &self.pos_emb);
        }
        for (l, layer) in self.layers.iter().enumerate() {
            let p = |s: &str| format!("blocks.{l}.{s}");
            f(p("ln1.g"), vec![d], &layer.ln1_g);
            f(p("ln1.b"), vec![d], &layer.ln1_b);
            f(p("attn.w_q"), vec![h, d, dh], &layer.w_q);
            f(p("attn.b_q"), vec![h, dh], &layer.b_q);
            f(p("attn.w_k"), vec![h, d, dh], &layer.w_k);
            f(p("attn.b_k"), vec![h, dh], &layer.b_k);
            f(p("attn.w_v"), vec![h, d, dh], &layer.w_v);
            f(p("attn.b_v"), vec![h, dh], &layer.b_v);
            f(p("attn.w_o"), vec![h, dh, d], &layer.w_o);
            f(p("ln2.g"), vec![d], &layer.ln2_g);
            f(p("ln2.b"), vec![d], &layer.ln2_b);
            f(p("mlp.w_in"), vec![d, dm], &layer.w_in);
            f(p("mlp.b_in"), vec![dm], &layer.b_in);
            f(p("mlp.w_out"), vec![dm, d], &layer.w_out);
            f(p("mlp.b_out"), vec![d], &layer.b_out);
        }
        f("ln_f.g".into(), vec![d], &self.lnf_g);
        f("ln_f.b".into(), vec![d], &self.lnf_b);
        f("unembed.w".into(), vec![d, v], &self.w_u);
    }

    /// Mutable tensors in the same order as [`Weights::visit`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = vec![&mut self.tok_emb];
        if !self.pos_emb.is_empty() {
            out.push(&mut self.pos_emb);
        }
        for layer in &mut self.layers {
            out.extend([
                &mut layer.ln1_g,
                &mut layer.ln1_b,
                &mut layer.w_q,
                &mut layer.b_q,
                &mut layer.w_k,
                &mut layer.b_k,
                &mut layer.w_v,
                &mut layer.b_v,
                &mut layer.w_o,
                &mut layer.ln2_g,
                &mut layer.ln2_b,
                &mut layer.w_in,
                &mut layer.b_in,
                &mut layer.w_out,
                &mut layer.b_out,
            ]);
        }
        out.extend([&mut self.lnf_g, &mut self.lnf_b, &mut self.w_u]);
        out
    }

    pub fn tensors(&self) -> Vec<&Vec<f64>> {
        let mut out: Vec<&Vec<f64>> = vec![&self.tok_emb];
        if !self.pos_emb.is_empty() {
            out.push(&self.pos_emb);
        }
        for layer in &self.layers {
            out.extend([
                &layer.ln1_g,
                &layer.ln1_b,
                &layer.w_q,
                &layer.b_q,
                &layer.w_k,
                &layer.b_k,
                &layer.w_v,
                &layer.b_v,
                &layer.w_o,
                &layer.ln2_g,
                &layer.ln2_b,
                &layer.w_in,
                &layer.b_in,
                &layer.w_out,
                &layer.b_out,
            ]);
        }
        out.extend([&self.lnf_g, &self.lnf_b, &self.w_u]);
        out
    }

    pub fn n_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Weights, scale: f64) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += scale * y;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|x| x.is_finite()))
    }
}

fn fill(buf: &mut [f64], std: f64, rng: &mut impl Rng) {
    let normal = Normal::new(0.0, std).expect("positive std");
    for x in buf {
        *x = normal.sample(rng);
    }
}
