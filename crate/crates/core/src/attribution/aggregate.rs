use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{eap_ig_scores, normalize, EdgeScoreTable, IgConfig};
use crate::dataset::RoleCrossPair;
use crate::error::{Error, Result};
use crate::graph::{NodeKind, Wiring};
use crate::model::Checkpoint;

/// Summed |raw score| of edges into each attention head (columns `0..H`)
/// and MLP (last column), one row per layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub n_layers: usize,
    pub n_heads: usize,
    pub cells: Vec<Vec<f64>>,
}

impl Heatmap {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer");
        for h in 0..self.n_heads {
            let _ = write!(out, ",h{h}");
        }
        out.push_str(",mlp\n");
        for (l, row) in self.cells.iter().enumerate() {
            let _ = write!(out, "{l}");
            for x in row {
                let _ = write!(out, ",{x}");
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoleAttribution {
    pub table: EdgeScoreTable,
    pub heatmap: Heatmap,
}

pub fn role_heatmap(table: &EdgeScoreTable, n_layers: usize, n_heads: usize) -> Result<Heatmap> {
    let wiring = Wiring::new(n_layers, n_heads, table.seq_len);
    if wiring.n_edges() != table.len() {
        return Err(Error::Shape(format!(
            "score table has {} edges, wiring has {}",
            table.len(),
            wiring.n_edges()
        )));
    }
    let mut cells = vec![vec![0.0; n_heads + 1]; n_layers];
    for (e, s) in table.raw.iter().enumerate() {
        let dst = wiring.slots[wiring.edges[e].1].dst;
        let col = match dst.kind {
            NodeKind::AttnHead => dst.head.unwrap_or(0),
            NodeKind::Mlp => n_heads,
            _ => continue,
        };
        cells[dst.layer as usize][col] += s.abs();
    }
    Ok(Heatmap {
        n_layers,
        n_heads,
        cells,
    })
}

/// Mean raw scores over pairs of one role, normalised afterwards.
pub fn aggregate_role(
    ckpt: &Checkpoint,
    pairs: &[RoleCrossPair],
    cfg: &IgConfig,
) -> Result<RoleAttribution> {
    let first = pairs
        .first()
        .ok_or_else(|| Error::InvalidInput("no pairs to aggregate".into()))?;
    if let Some(p) = pairs.iter().find(|p| p.role_clean != first.role_clean) {
        return Err(Error::InvalidInput(format!(
            "mixed roles in one aggregation: {} and {}",
            first.role_clean, p.role_clean
        )));
    }
    if let Some(p) = pairs
        .iter()
        .find(|p| p.clean_tokens.len() != first.clean_tokens.len())
    {
        return Err(Error::InvalidInput(format!(
            "mixed sequence lengths in one aggregation: {} and {}",
            first.clean_tokens.len(),
            p.clean_tokens.len()
        )));
    }
    let tables = pairs
        .par_iter()
        .map(|p| eap_ig_scores(ckpt, p, cfg))
        .collect::<Result<Vec<_>>>()?;
    let n = tables[0].len();
    let mut raw = vec![0.0; n];
    let mut norm_product = vec![0.0; n];
    for t in &tables {
        for i in 0..n {
            raw[i] += t.raw[i];
            norm_product[i] += t.norm_product[i];
        }
    }
    let count = tables.len() as f64;
    raw.iter_mut().for_each(|x| *x /= count);
    norm_product.iter_mut().for_each(|x| *x /= count);
    let mut table = EdgeScoreTable {
        normalized: vec![0.0; n],
        raw,
        norm_product,
        normalization: None,
        all_zero: false,
        checkpoint_step: ckpt.step,
        role: first.role_clean.clone(),
        n_pairs: pairs.len(),
        seq_len: first.clean_tokens.len(),
    };
    normalize(&mut table, cfg.normalization, cfg.epsilon)?;
    let heatmap = role_heatmap(&table, ckpt.config.n_layers, ckpt.config.n_heads)?;
    Ok(RoleAttribution { table, heatmap })
}
