//! Emergence markers over a checkpoint grid. Each marker is the earliest
//! grid step at which a condition starts to hold for `persistence`
//! consecutive checkpoints.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::metrics::stability_series;
use crate::{Error, Result};

pub const DETECT_PERSISTENCE: usize = 2;
pub const DEFAULT_CONSOLIDATION_THRESHOLD: f64 = 0.6;
pub const DEFAULT_CONSOLIDATION_PERSISTENCE: usize = 2;
pub const DEFAULT_CONSOLIDATION_K: usize = 20;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndispensabilityMode {
    /// Drop `M(E) − M(E∖C)` above a threshold.
    #[default]
    Drop,
    /// Circuit-only metric below the full-model metric.
    Sign,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropThreshold {
    /// Mean plus population standard deviation of the first two drops.
    #[default]
    Baseline,
    Fixed(f64),
}

/// A marker together with the threshold it was tested against.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Marker {
    pub step: Option<u64>,
    pub threshold: f64,
    /// The baseline had zero spread, so the threshold is its mean.
    pub degenerate_baseline: bool,
}

fn first_persistent(steps: &[u64], hits: &[bool], persistence: usize) -> Option<u64> {
    let p = persistence.max(1);
    (0..hits.len())
        .find(|&i| i + p <= hits.len() && hits[i..i + p].iter().all(|h| *h))
        .map(|i| steps[i])
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

fn check_aligned(steps: &[u64], len: usize, what: &str) -> Result<()> {
    if len != steps.len() {
        return Err(Error::InvalidInput(format!(
            "{what} has {len} values for {} checkpoints",
            steps.len()
        )));
    }
    if steps.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput(
            "checkpoint steps must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Earliest step whose faithfulness exceeds the mean plus two standard
/// deviations of the first two checkpoints, for two checkpoints running.
/// Undefined faithfulness never exceeds.
pub fn detect_detectability(steps: &[u64], faithfulness: &[Option<f64>]) -> Result<Marker> {
    check_aligned(steps, faithfulness.len(), "faithfulness")?;
    if steps.len() < 4 {
        return Err(Error::InvalidInput(format!(
            "detectability needs at least 4 checkpoints, got {}",
            steps.len()
        )));
    }
    let base: Vec<f64> = faithfulness[..2].iter().map(|f| f.unwrap_or(0.0)).collect();
    let (m, s) = mean_std(&base);
    let threshold = m + 2.0 * s;
    let hits: Vec<bool> = faithfulness
        .iter()
        .map(|f| f.is_some_and(|v| v > threshold))
        .collect();
    Ok(Marker {
        step: first_persistent(steps, &hits, DETECT_PERSISTENCE),
        threshold,
        degenerate_baseline: s == 0.0,
    })
}

/// Indispensability from per-step metrics of the full model (`full`), the
/// model with the circuit removed (`without`) and the circuit alone
/// (`circuit`).
pub fn detect_indispensability(
    steps: &[u64],
    full: &[f64],
    without: &[f64],
    circuit: &[f64],
    mode: IndispensabilityMode,
    threshold: DropThreshold,
) -> Result<Marker> {
    check_aligned(steps, full.len(), "full-model metric")?;
    match mode {
        IndispensabilityMode::Drop => {
            check_aligned(steps, without.len(), "circuit-removed metric")?;
            let drops: Vec<f64> = full.iter().zip(without).map(|(f, w)| f - w).collect();
            let (theta, degenerate) = match threshold {
                DropThreshold::Fixed(t) => (t, false),
                DropThreshold::Baseline => {
                    if steps.len() < 2 {
                        return Err(Error::InvalidInput(
                            "baseline drop threshold needs at least 2 checkpoints".into(),
                        ));
                    }
                    let (m, s) = mean_std(&drops[..2]);
                    (m + s, s == 0.0)
                }
            };
            let hits: Vec<bool> = drops.iter().map(|d| *d > theta).collect();
            Ok(Marker {
                step: first_persistent(steps, &hits, DETECT_PERSISTENCE),
                threshold: theta,
                degenerate_baseline: degenerate,
            })
        }
        IndispensabilityMode::Sign => {
            check_aligned(steps, circuit.len(), "circuit-only metric")?;
            let hits: Vec<bool> = circuit.iter().zip(full).map(|(c, f)| c - f < 0.0).collect();
            Ok(Marker {
                step: first_persistent(steps, &hits, DETECT_PERSISTENCE),
                threshold: 0.0,
                degenerate_baseline: false,
            })
        }
    }
}

/// Earliest step from which `persistence` consecutive stability values
/// reach `threshold`. `stability[i]` compares checkpoints `i` and `i + 1`.
pub fn consolidation_from_stability(
    steps: &[u64],
    stability: &[f64],
    threshold: f64,
    persistence: usize,
) -> Result<Option<u64>> {
    if steps.len() < persistence + 1 {
        return Err(Error::InvalidInput(format!(
            "consolidation with persistence {persistence} needs at least {} checkpoints, got {}",
            persistence + 1,
            steps.len()
        )));
    }
    if stability.len() + 1 != steps.len() {
        return Err(Error::InvalidInput(format!(
            "{} stability values for {} checkpoints",
            stability.len(),
            steps.len()
        )));
    }
    let hits: Vec<bool> = stability.iter().map(|s| *s >= threshold).collect();
    Ok(first_persistent(steps, &hits, persistence))
}

/// Consolidation on per-checkpoint identifier sets (typically top-k nodes).
pub fn detect_consolidation<T: Ord>(
    steps: &[u64],
    sets: &[BTreeSet<T>],
    threshold: f64,
    persistence: usize,
) -> Result<Option<u64>> {
    check_aligned(steps, sets.len(), "circuit sets")?;
    if steps.len() < persistence + 1 || steps.len() < 2 {
        return consolidation_from_stability(steps, &[], threshold, persistence);
    }
    consolidation_from_stability(steps, &stability_series(sets)?, threshold, persistence)
}

#[cfg(test)]
mod tests {
    use super::*;

    const STEPS: [u64; 5] = [0, 8, 32, 128, 512];

    #[test]
    fn detectability_examples() {
        let some = |v: &[f64]| v.iter().map(|x| Some(*x)).collect::<Vec<_>>();
        let m = detect_detectability(&STEPS[..4], &some(&[0.1, 0.1, 0.9, 0.9])).unwrap();
        assert_eq!(m.step, Some(32));
        assert!(m.degenerate_baseline);
        assert_eq!(
            detect_detectability(&STEPS[..4], &some(&[0.4; 4]))
                .unwrap()
                .step,
            None
        );
        let spike = some(&[0.1, 0.1, 0.9, 0.1, 0.1]);
        assert_eq!(detect_detectability(&STEPS, &spike).unwrap().step, None);
        assert!(detect_detectability(&STEPS[..3], &some(&[0.1; 3])).is_err());
    }

    #[test]
    fn indispensability_examples() {
        let full = [1.0; 5];
        let without = [1.0, 1.0, 0.7, 0.7, 0.7];
        let m = detect_indispensability(
            &STEPS,
            &full,
            &without,
            &[],
            IndispensabilityMode::Drop,
            DropThreshold::Fixed(0.1),
        )
        .unwrap();
        assert_eq!(m.step, Some(32));
        let never = detect_indispensability(
            &STEPS,
            &full,
            &full,
            &[],
            IndispensabilityMode::Drop,
            DropThreshold::Baseline,
        )
        .unwrap();
        assert_eq!(never.step, None);
        let blip = [1.0, 1.0, 0.7, 1.0, 1.0];
        let one = detect_indispensability(
            &STEPS,
            &full,
            &blip,
            &[],
            IndispensabilityMode::Drop,
            DropThreshold::Fixed(0.1),
        )
        .unwrap();
        assert_eq!(one.step, None);
        let circuit = [1.0, 1.2, 0.9, 0.8, 0.95];
        let sign = detect_indispensability(
            &STEPS,
            &full,
            &[],
            &circuit,
            IndispensabilityMode::Sign,
            DropThreshold::Baseline,
        )
        .unwrap();
        assert_eq!(sign.step, Some(32));
    }

    #[test]
    fn consolidation_examples() {
        let s = consolidation_from_stability(&STEPS, &[0.2, 0.7, 0.7, 0.9], 0.6, 2).unwrap();
        assert_eq!(s, Some(8));
        let same: Vec<BTreeSet<u8>> = vec![[1, 2].into(); 5];
        assert_eq!(
            detect_consolidation(&STEPS, &same, 0.6, 2).unwrap(),
            Some(0)
        );
        let churn: Vec<BTreeSet<u8>> = (0..5).map(|i| [i].into()).collect();
        assert_eq!(detect_consolidation(&STEPS, &churn, 0.6, 2).unwrap(), None);
        assert!(detect_consolidation(&STEPS[..2], &same[..2], 0.6, 2).is_err());
    }
}
