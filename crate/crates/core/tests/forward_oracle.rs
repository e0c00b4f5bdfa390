//! The edge-wired engine against a plain residual-stream transformer.

use rand::Rng;
use rolecirc_core::model::{forward, init_model, Checkpoint, ModelConfig, PositionalScheme};
use rolecirc_core::rng::rng_for;

fn layer_norm(x: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let s = (var + 1e-5).sqrt();
    (0..x.len())
        .map(|k| g[k] * (x[k] - mean) / s + b[k])
        .collect()
}

fn matvec(x: &[f64], w: &[f64], cols: usize) -> Vec<f64> {
    (0..cols)
        .map(|c| {
            x.iter()
                .enumerate()
                .map(|(r, xr)| xr * w[r * cols + c])
                .sum()
        })
        .collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

/// Logits of every position, `t × vocab`, computed on the residual stream.
fn reference_logits(ck: &Checkpoint, tokens: &[usize]) -> Vec<f64> {
    let c = &ck.config;
    let w = &ck.weights;
    let (d, dh, dm, h, v) = (c.d_model, c.d_head, c.d_mlp, c.n_heads, c.vocab_size);
    let t = tokens.len();
    let mut resid: Vec<Vec<f64>> = tokens
        .iter()
        .enumerate()
        .map(|(i, &tok)| {
            (0..d)
                .map(|k| {
                    let pos = match c.positional_scheme {
                        PositionalScheme::Learned => w.pos_emb[i * d + k],
                        PositionalScheme::Sinusoidal => {
                            let angle = i as f64 / 10000f64.powf(2.0 * (k / 2) as f64 / d as f64);
                            if k % 2 == 0 {
                                angle.sin()
                            } else {
                                angle.cos()
                            }
                        }
                    };
                    w.tok_emb[tok * d + k] + pos
                })
                .collect()
        })
        .collect();
    for lw in &w.layers {
        let normed: Vec<Vec<f64>> = resid
            .iter()
            .map(|x| layer_norm(x, &lw.ln1_g, &lw.ln1_b))
            .collect();
        let mut attn = vec![vec![0.0; d]; t];
        for hd in 0..h {
            let proj = |m: &[f64], b: &[f64], x: &[f64]| -> Vec<f64> {
                let mut p = matvec(x, &m[hd * d * dh..(hd + 1) * d * dh], dh);
                for (pk, bk) in p.iter_mut().zip(&b[hd * dh..(hd + 1) * dh]) {
                    *pk += bk;
                }
                p
            };
            let q: Vec<Vec<f64>> = normed.iter().map(|x| proj(&lw.w_q, &lw.b_q, x)).collect();
            let k: Vec<Vec<f64>> = normed.iter().map(|x| proj(&lw.w_k, &lw.b_k, x)).collect();
            let val: Vec<Vec<f64>> = normed.iter().map(|x| proj(&lw.w_v, &lw.b_v, x)).collect();
            for i in 0..t {
                let scores: Vec<f64> = (0..=i)
                    .map(|j| {
                        q[i].iter().zip(&k[j]).map(|(a, b)| a * b).sum::<f64>() / (dh as f64).sqrt()
                    })
                    .collect();
                let z: f64 = scores.iter().map(|s| s.exp()).sum();
                let mut o = vec![0.0; dh];
                for j in 0..=i {
                    let p = scores[j].exp() / z;
                    for e in 0..dh {
                        o[e] += p * val[j][e];
                    }
                }
                let out = matvec(&o, &lw.w_o[hd * dh * d..(hd + 1) * dh * d], d);
                for e in 0..d {
                    attn[i][e] += out[e];
                }
            }
        }
        for i in 0..t {
            for e in 0..d {
                resid[i][e] += attn[i][e];
            }
        }
        for x in resid.iter_mut() {
            let n = layer_norm(x, &lw.ln2_g, &lw.ln2_b);
            let mut hid = matvec(&n, &lw.w_in, dm);
            for (a, b) in hid.iter_mut().zip(&lw.b_in) {
                *a = gelu(*a + b);
            }
            let out = matvec(&hid, &lw.w_out, d);
            for e in 0..d {
                x[e] += out[e] + lw.b_out[e];
            }
        }
    }
    resid
        .iter()
        .flat_map(|x| matvec(&layer_norm(x, &w.lnf_g, &w.lnf_b), &w.w_u, v))
        .collect()
}

/// Seeded model with every bias and gain moved off its initial value.
fn perturbed(cfg: &ModelConfig, seed: u64) -> Checkpoint {
    let mut ck = init_model(cfg, seed).unwrap();
    let mut rng = rng_for(seed, "perturb");
    for tensor in ck.weights.tensors_mut() {
        for x in tensor.iter_mut() {
            *x += rng.random_range(-0.3..0.3);
        }
    }
    ck
}

fn check(cfg: ModelConfig, seed: u64) {
    let ck = perturbed(&cfg, seed);
    let mut rng = rng_for(seed, "tokens");
    for len in [1, 3, 6] {
        let tokens: Vec<usize> = (0..len)
            .map(|_| rng.random_range(0..cfg.vocab_size))
            .collect();
        let got = forward(&ck, &tokens).unwrap();
        let want = reference_logits(&ck, &tokens);
        assert_eq!(got.len(), want.len());
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }
}

#[test]
fn one_layer_matches_reference() {
    for seed in 0..5 {
        check(ModelConfig::tiny(1, 2, 8, 12), seed);
    }
}

#[test]
fn two_layers_match_reference() {
    check(ModelConfig::tiny(2, 2, 8, 64), 11);
    check(ModelConfig::tiny(2, 4, 12, 20), 12);
}

#[test]
fn sinusoidal_positions_match_reference() {
    let mut cfg = ModelConfig::tiny(2, 2, 8, 16);
    cfg.positional_scheme = PositionalScheme::Sinusoidal;
    check(cfg, 21);
}
