//! Integrated-gradient edge attribution, normalisation, circuit extraction
//! and faithfulness.

mod aggregate;
mod circuit;
mod ig;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LossKind;

pub use aggregate::{aggregate_role, role_heatmap, Heatmap, RoleAttribution};
pub use circuit::{extract_circuit, faithfulness, score_graph, Faithfulness};
pub use ig::{eap_ig_scores, patch_effects, source_deltas, SourceDeltas};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Divide by the total absolute score.
    #[default]
    TotalMass,
    /// Divide each score by the product of its delta and gradient norms.
    Cosine,
}

/// Sign convention of the source deltas.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    #[default]
    CleanMinusCorrupt,
    CorruptMinusClean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IgConfig {
    /// Interpolation steps; gradients are taken at `k/m` for `k = 1..=m`.
    pub m: usize,
    pub normalization: Normalization,
    pub epsilon: f64,
    pub top_k_edges: usize,
    pub orientation: Orientation,
    pub loss: LossKind,
    /// Positive factor applied to the loss before differentiation.
    pub loss_scale: f64,
}

impl Default for IgConfig {
    fn default() -> Self {
        IgConfig {
            m: 5,
            normalization: Normalization::TotalMass,
            epsilon: 1e-8,
            top_k_edges: 200,
            orientation: Orientation::CleanMinusCorrupt,
            loss: LossKind::CrossEntropy,
            loss_scale: 1.0,
        }
    }
}

impl IgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::Config("m must be at least 1".into()));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if self.top_k_edges == 0 {
            return Err(Error::Config("top_k_edges must be at least 1".into()));
        }
        if !self.loss_scale.is_finite() || self.loss_scale <= 0.0 {
            return Err(Error::Config("loss_scale must be a positive number".into()));
        }
        Ok(())
    }
}

/// Per-edge scores in canonical edge order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeScoreTable {
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
    /// `‖Δ_src‖ · ‖ḡ_slot‖` per edge (averaged over pairs for role tables).
    pub norm_product: Vec<f64>,
    pub normalization: Option<Normalization>,
    /// Set when total-mass normalisation met an all-zero table.
    pub all_zero: bool,
    pub checkpoint_step: u64,
    pub role: String,
    pub n_pairs: usize,
    pub seq_len: usize,
}

impl EdgeScoreTable {
    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }
}

/// Fills `table.normalized` under `mode`.
pub fn normalize(table: &mut EdgeScoreTable, mode: Normalization, epsilon: f64) -> Result<()> {
    if table.raw.is_empty() {
        return Err(Error::InvalidInput(
            "cannot normalise an empty score table".into(),
        ));
    }
    table.all_zero = false;
    table.normalized = match mode {
        Normalization::TotalMass => {
            let mass: f64 = table.raw.iter().map(|s| s.abs()).sum();
            if mass == 0.0 {
                tracing::warn!(role = %table.role, step = table.checkpoint_step, "all attribution scores are zero");
                table.all_zero = true;
                vec![0.0; table.raw.len()]
            } else {
                table.raw.iter().map(|s| s / mass).collect()
            }
        }
        Normalization::Cosine => table
            .raw
            .iter()
            .zip(&table.norm_product)
            .map(|(s, p)| s / (p + epsilon))
            .collect(),
    };
    table.normalization = Some(mode);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table(raw: Vec<f64>) -> EdgeScoreTable {
        let n = raw.len();
        EdgeScoreTable {
            norm_product: raw.iter().map(|s| s.abs() * 1.5).collect(),
            raw,
            normalized: vec![0.0; n],
            normalization: None,
            all_zero: false,
            checkpoint_step: 0,
            role: "r".into(),
            n_pairs: 1,
            seq_len: 1,
        }
    }

    #[test]
    fn all_zero_total_mass_is_flagged() {
        let mut t = table(vec![0.0; 4]);
        normalize(&mut t, Normalization::TotalMass, 1e-8).unwrap();
        assert!(t.all_zero);
        assert!(t.normalized.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn empty_table_is_rejected() {
        assert!(normalize(&mut table(vec![]), Normalization::TotalMass, 1e-8).is_err());
    }

    proptest! {
        #[test]
        fn total_mass_sums_to_one_and_is_scale_free(raw in proptest::collection::vec(-5.0f64..5.0, 1..40)) {
            prop_assume!(raw.iter().any(|&x| x != 0.0));
            let mut a = table(raw.clone());
            normalize(&mut a, Normalization::TotalMass, 1e-8).unwrap();
            let total: f64 = a.normalized.iter().map(|x| x.abs()).sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            let mut b = table(raw.iter().map(|x| x * 7.0).collect());
            normalize(&mut b, Normalization::TotalMass, 1e-8).unwrap();
            for (x, y) in a.normalized.iter().zip(&b.normalized) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn cosine_is_bounded(raw in proptest::collection::vec(-5.0f64..5.0, 1..40)) {
            let mut a = table(raw);
            normalize(&mut a, Normalization::Cosine, 1e-8).unwrap();
            prop_assert!(a.normalized.iter().all(|x| x.abs() <= 1.0));
        }
    }
}
