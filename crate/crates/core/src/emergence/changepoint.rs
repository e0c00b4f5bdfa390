//! Two-segment least-squares change-point with percentile bootstrap.

use std::collections::BTreeSet;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::child_rng;
use crate::{Error, Result};

pub const DEFAULT_MIN_SEGMENT: usize = 3;
pub const DEFAULT_BOOTSTRAP: usize = 1000;
const MAX_REDRAWS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChangePoint {
    /// First x of the right-hand segment.
    pub t_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub r_squared: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
    /// Replicates that never reached enough distinct x values.
    pub skipped: usize,
}

/// Least-squares line through `pts`: (slope, intercept, residual).
fn fit_line(pts: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let ssr = pts
        .iter()
        .map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2))
        .sum();
    (slope, my - slope * mx, ssr)
}

struct Split {
    /// Last x of the left segment.
    left_end: f64,
    /// First x of the right segment.
    right_start: f64,
    /// Where the two fitted lines cross, clamped to the gap between the
    /// segments; the gap's right end when the lines are parallel.
    crossing: f64,
    ssr: f64,
}

/// Best split of points sorted by x. Splits fall between distinct x values
/// and leave at least `min_seg` distinct x values on each side; ties go to
/// the earliest split.
fn best_split(pts: &[(f64, f64)], min_seg: usize) -> Option<Split> {
    let distinct: Vec<f64> = {
        let mut v: Vec<f64> = pts.iter().map(|p| p.0).collect();
        v.dedup();
        v
    };
    if min_seg == 0 || distinct.len() < 2 * min_seg {
        return None;
    }
    let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let sst: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let tol = 1e-12 * sst.max(f64::MIN_POSITIVE);
    let fits: Vec<Split> = (min_seg..=distinct.len() - min_seg)
        .map(|s| {
            let (a, c) = (distinct[s - 1], distinct[s]);
            let cut = pts.partition_point(|p| p.0 < c);
            let (m1, b1, r1) = fit_line(&pts[..cut]);
            let (m2, b2, r2) = fit_line(&pts[cut..]);
            let cross = (b2 - b1) / (m1 - m2);
            Split {
                left_end: a,
                right_start: c,
                crossing: if cross.is_finite() {
                    cross.clamp(a, c)
                } else {
                    c
                },
                ssr: r1 + r2,
            }
        })
        .collect();
    let min = fits.iter().map(|f| f.ssr).fold(f64::INFINITY, f64::min);
    fits.into_iter().find(|f| f.ssr <= min + tol)
}

/// The grid value in `(left_end, right_start]` nearest the crossing point;
/// ties go to the smaller value.
fn on_grid(grid: &[f64], split: &Split) -> f64 {
    let lo = grid.partition_point(|g| *g <= split.left_end);
    let hi = grid.partition_point(|g| *g <= split.right_start);
    grid[lo..hi.max(lo + 1).min(grid.len())]
        .iter()
        .copied()
        .fold(None, |best: Option<f64>, g| match best {
            Some(b) if (b - split.crossing).abs() <= (g - split.crossing).abs() => Some(b),
            _ => Some(g),
        })
        .unwrap_or(split.right_start)
}

fn r_squared(y: &[f64], ssr: f64) -> f64 {
    let my = y.iter().sum::<f64>() / y.len() as f64;
    let sst: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sst == 0.0 {
        return 1.0;
    }
    (1.0 - ssr / sst).clamp(0.0, 1.0)
}

fn check_series(x: &[f64], y: &[f64], min_seg: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput(format!(
            "{} x values but {} y values",
            x.len(),
            y.len()
        )));
    }
    if let Some(v) = x.iter().chain(y).find(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite series value {v}")));
    }
    if x.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidInput(
            "x values must be strictly increasing".into(),
        ));
    }
    if min_seg == 0 || x.len() < 2 * min_seg {
        return Err(Error::InvalidInput(format!(
            "series of length {} is too short for two segments of at least {min_seg}",
            x.len()
        )));
    }
    Ok(())
}

/// Exhaustive two-segment fit; ties go to the earliest split. The interval
/// fields are set to the point estimate.
pub fn fit_piecewise(x: &[f64], y: &[f64], min_seg: usize) -> Result<ChangePoint> {
    check_series(x, y, min_seg)?;
    let pts: Vec<(f64, f64)> = x.iter().copied().zip(y.iter().copied()).collect();
    let split = best_split(&pts, min_seg).expect("length checked");
    let (t_hat, ssr) = (on_grid(x, &split), split.ssr);
    Ok(ChangePoint {
        t_hat,
        ci_low: t_hat,
        ci_high: t_hat,
        r_squared: r_squared(y, ssr),
    })
}

/// Split of every bootstrap replicate, mapped back to the original grid; `None` for replicates that never drew enough distinct
/// x values. Replicate `r` draws from child stream `r` of
/// `(seed, "bootstrap")`.
pub fn bootstrap_splits(
    x: &[f64],
    y: &[f64],
    n_boot: usize,
    min_seg: usize,
    seed: u64,
) -> Result<Vec<Option<f64>>> {
    check_series(x, y, min_seg)?;
    let n = x.len();
    Ok((0..n_boot)
        .into_par_iter()
        .map(|r| {
            let mut rng = child_rng(seed, "bootstrap", r as u64);
            for _ in 0..MAX_REDRAWS {
                let mut idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                let distinct: BTreeSet<usize> = idx.iter().copied().collect();
                if distinct.len() < 2 * min_seg {
                    continue;
                }
                idx.sort_unstable();
                let pts: Vec<(f64, f64)> = idx.iter().map(|&i| (x[i], y[i])).collect();
                return best_split(&pts, min_seg).map(|s| on_grid(x, &s));
            }
            None
        })
        .collect())
}

/// Lower 2.5% and upper 97.5% order statistics of [`bootstrap_splits`].
pub fn bootstrap_ci(
    x: &[f64],
    y: &[f64],
    n_boot: usize,
    min_seg: usize,
    seed: u64,
) -> Result<Interval> {
    if n_boot == 0 {
        return Err(Error::InvalidInput(
            "bootstrap needs at least one replicate".into(),
        ));
    }
    let splits = bootstrap_splits(x, y, n_boot, min_seg, seed)?;
    let mut vals: Vec<f64> = splits.iter().flatten().copied().collect();
    let skipped = n_boot - vals.len();
    if skipped > 0 {
        tracing::warn!(
            skipped,
            "bootstrap replicates without enough distinct x values"
        );
    }
    if vals.is_empty() {
        return Err(Error::Undefined(
            "every bootstrap replicate was skipped".into(),
        ));
    }
    vals.sort_by(|a, b| a.total_cmp(b));
    let last = (vals.len() - 1) as f64;
    Ok(Interval {
        low: vals[(0.025 * last).floor() as usize],
        high: vals[(0.975 * last).ceil() as usize],
        skipped,
    })
}

/// Point estimate plus bootstrap interval, widened to contain the estimate.
pub fn changepoint(
    x: &[f64],
    y: &[f64],
    n_boot: usize,
    min_seg: usize,
    seed: u64,
) -> Result<(ChangePoint, usize)> {
    let mut cp = fit_piecewise(x, y, min_seg)?;
    let ci = bootstrap_ci(x, y, n_boot, min_seg, seed)?;
    cp.ci_low = ci.low.min(cp.t_hat);
    cp.ci_high = ci.high.max(cp.t_hat);
    Ok((cp, ci.skipped))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64).collect()
    }

    #[test]
    fn kinked_series() {
        let cp = fit_piecewise(&grid(7), &[0.0, 1.0, 2.0, 3.0, 3.0, 3.0, 3.0], 3).unwrap();
        assert_eq!(cp.t_hat, 3.0);
        assert!((cp.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_fits_take_the_earliest_split() {
        let lin: Vec<f64> = grid(9).iter().map(|x| 0.3 * x - 1.0).collect();
        let cp = fit_piecewise(&grid(9), &lin, 3).unwrap();
        assert_eq!(cp.t_hat, 3.0);
        assert!((cp.r_squared - 1.0).abs() < 1e-12);
        let cp = fit_piecewise(&grid(8), &[2.0; 8], 2).unwrap();
        assert_eq!((cp.t_hat, cp.r_squared), (2.0, 1.0));
    }

    #[test]
    fn short_series_is_an_error() {
        assert!(fit_piecewise(&grid(5), &[0.0; 5], 3).is_err());
        assert!(fit_piecewise(&[0.0, 0.0, 1.0, 2.0, 3.0, 4.0], &[0.0; 6], 3).is_err());
    }

    #[test]
    fn bootstrap_is_deterministic_and_collapses_on_clean_data() {
        let x = grid(20);
        let y: Vec<f64> = x
            .iter()
            .map(|&v| if v < 12.0 { 0.0 } else { v - 12.0 })
            .collect();
        let a = bootstrap_ci(&x, &y, 200, 3, 9).unwrap();
        assert_eq!(a, bootstrap_ci(&x, &y, 200, 3, 9).unwrap());
        assert!(a.low <= 12.0 && a.high >= 12.0, "{a:?}");
        let splits = bootstrap_splits(&x, &y, 1000, 3, 9).unwrap();
        let exact = splits.iter().filter(|s| **s == Some(12.0)).count();
        assert!(exact >= 950, "{exact}");
        let one = bootstrap_ci(&x, &y, 1, 3, 9).unwrap();
        assert_eq!(one.low, one.high);
    }
}
