//! Deterministic next-token trainer with a checkpoint grid.

use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::{init_model, save_checkpoint, Checkpoint};
use super::config::ModelConfig;
use super::engine;
use super::params::Weights;
use super::task::{check_tokens, target_loss, LossKind};
use crate::error::{Error, Result};
use crate::graph::Wiring;
use crate::rng::rng_for;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub total_steps: u64,
    pub checkpoint_steps: Vec<u64>,
    pub lr: f64,
    pub batch_size: usize,
    pub optimizer: Optimizer,
}

pub fn checkpoint_file_name(step: u64) -> String {
    format!("ckpt_{step:08}.json")
}

/// Mean next-token cross-entropy of one sequence and its parameter
/// gradient.
fn sequence_grad(cfg: &ModelConfig, w: &Weights, tokens: &[usize]) -> (f64, Weights) {
    let t = tokens.len();
    let v = cfg.vocab_size;
    let wiring = Wiring::new(cfg.n_layers, cfg.n_heads, t);
    let emb = engine::embed(cfg, w, tokens);
    let tr = engine::forward(cfg, w, &wiring, &emb, None);
    let n = (t - 1) as f64;
    let mut dlogits = vec![0.0; t * v];
    let mut loss = 0.0;
    for i in 0..t - 1 {
        let (l, g) = target_loss(
            &tr.logits[i * v..(i + 1) * v],
            tokens[i + 1],
            LossKind::CrossEntropy,
        );
        loss += l / n;
        for (d, x) in dlogits[i * v..(i + 1) * v].iter_mut().zip(g) {
            *d = x / n;
        }
    }
    let grads = engine::backward(cfg, w, &wiring, &tr, &dlogits, None, true);
    let mut params = grads.params.expect("parameter gradients requested");
    engine::accumulate_embedding_grads(cfg, &mut params, tokens, &grads.embeddings);
    (loss, params)
}

/// Trains from a seeded initialisation and returns the checkpoints at the
/// requested steps (written to `out_dir` when given).
pub fn train(
    config: &ModelConfig,
    corpus: &[Vec<usize>],
    schedule: &Schedule,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<Vec<Checkpoint>> {
    let docs: Vec<&Vec<usize>> = corpus.iter().filter(|d| d.len() >= 2).collect();
    if docs.is_empty() {
        return Err(Error::InvalidInput(
            "corpus has no sequence of two or more tokens".into(),
        ));
    }
    for doc in &docs {
        check_tokens(config, doc)?;
    }
    if schedule.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    if let Some(&bad) = schedule
        .checkpoint_steps
        .iter()
        .find(|&&s| s > schedule.total_steps)
    {
        return Err(Error::Config(format!(
            "checkpoint step {bad} exceeds total steps {}",
            schedule.total_steps
        )));
    }
    let mut grid = schedule.checkpoint_steps.clone();
    grid.sort_unstable();
    grid.dedup();
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut ckpt = init_model(config, seed)?;
    let mut m = Weights::zeros(config);
    let mut v = Weights::zeros(config);
    let mut rng = rng_for(seed, "batches");
    let mut out = Vec::with_capacity(grid.len());
    let mut next = grid.iter().peekable();
    let emit = |ckpt: &Checkpoint, out: &mut Vec<Checkpoint>| -> Result<()> {
        if let Some(dir) = out_dir {
            save_checkpoint(ckpt, &dir.join(checkpoint_file_name(ckpt.step)))?;
        }
        out.push(ckpt.clone());
        Ok(())
    };
    if next.peek() == Some(&&0) {
        emit(&ckpt, &mut out)?;
        next.next();
    }

    for step in 1..=schedule.total_steps {
        if next.peek().is_none() {
            break;
        }
        let batch: Vec<&Vec<usize>> = (0..schedule.batch_size)
            .map(|_| docs[rng.random_range(0..docs.len())])
            .collect();
        let w = &ckpt.weights;
        let results: Vec<(f64, Weights)> = batch
            .par_iter()
            .map(|doc| sequence_grad(config, w, doc))
            .collect();
        let mut grad = Weights::zeros(config);
        let mut loss = 0.0;
        let scale = 1.0 / batch.len() as f64;
        for (l, g) in &results {
            grad.add_scaled(g, scale);
            loss += l * scale;
        }
        if !loss.is_finite() || !grad.all_finite() {
            return Err(Error::NonFinite {
                location: format!("training step {step}"),
            });
        }
        match schedule.optimizer {
            Optimizer::Sgd => ckpt.weights.add_scaled(&grad, -schedule.lr),
            Optimizer::Adam { beta1, beta2, eps } => {
                let bc1 = 1.0 - beta1.powi(step as i32);
                let bc2 = 1.0 - beta2.powi(step as i32);
                let params = ckpt.weights.tensors_mut();
                for (((p, g), m), v) in params
                    .into_iter()
                    .zip(grad.tensors())
                    .zip(m.tensors_mut())
                    .zip(v.tensors_mut())
                {
                    for i in 0..p.len() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                        let mhat = m[i] / bc1;
                        let vhat = v[i] / bc2;
                        p[i] -= schedule.lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        ckpt.step = step;
        if next.peek() == Some(&&step) {
            tracing::info!(step, loss, "checkpoint");
            emit(&ckpt, &mut out)?;
            next.next();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{forward, init_model};

    fn corpus() -> Vec<Vec<usize>> {
        (0..20)
            .map(|i| vec![i % 7, (i * 3) % 11, (i + 5) % 13, 2])
            .collect()
    }

    fn schedule(steps: u64, grid: Vec<u64>) -> Schedule {
        Schedule {
            total_steps: steps,
            checkpoint_steps: grid,
            lr: 1e-2,
            batch_size: 4,
            optimizer: Optimizer::adam(),
        }
    }

    #[test]
    fn grid_of_zero_returns_initialisation() {
        let cfg = ModelConfig::tiny(1, 2, 8, 16);
        let out = train(&cfg, &corpus(), &schedule(10, vec![0]), 4, None).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0], init_model(&cfg, 4).unwrap());
    }

    #[test]
    fn initial_loss_is_near_uniform_entropy() {
        let cfg = ModelConfig::tiny(2, 2, 8, 64);
        let c = init_model(&cfg, 1).unwrap();
        let tokens = [5, 9, 13, 40];
        let logits = forward(&c, &tokens).unwrap();
        let (loss, _) = target_loss(&logits[3 * 64..], 7, LossKind::CrossEntropy);
        assert!((loss / 64f64.ln() - 1.0).abs() < 0.1, "loss {loss}");
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let cfg = ModelConfig::tiny(1, 2, 8, 16);
        let dir = tempfile::tempdir().unwrap();
        let s = schedule(40, vec![0, 10, 40]);
        let a = train(&cfg, &corpus(), &s, 9, Some(dir.path())).unwrap();
        let b = train(&cfg, &corpus(), &s, 9, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            a.iter().map(|c| c.step).collect::<Vec<_>>(),
            vec![0, 10, 40]
        );
        assert!(dir.path().join(checkpoint_file_name(40)).exists());
        let mean_loss = |c: &Checkpoint| {
            corpus()
                .iter()
                .map(|d| sequence_grad(&cfg, &c.weights, d).0)
                .sum::<f64>()
        };
        assert!(mean_loss(&a[2]) < mean_loss(&a[0]));
    }

    #[test]
    fn rejects_bad_schedules() {
        let cfg = ModelConfig::tiny(1, 1, 4, 16);
        assert!(train(&cfg, &[], &schedule(5, vec![0]), 1, None).is_err());
        assert!(matches!(
            train(&cfg, &corpus(), &schedule(5, vec![6]), 1, None),
            Err(Error::Config(_))
        ));
    }
}
