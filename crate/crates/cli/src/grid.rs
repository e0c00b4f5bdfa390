//! Checkpoint step grids.

/// Checkpoint steps used when none are requested.
pub const DEFAULT_GRID: [u64; 7] = [0, 8, 32, 128, 512, 2000, 8000];

/// First nonzero step of a log-spaced grid.
const LOG_GRID_START: f64 = 8.0;

/// [`DEFAULT_GRID`] cut at `total`, with `total` itself appended.
pub fn default_grid(total: u64) -> Vec<u64> {
    let mut grid: Vec<u64> = DEFAULT_GRID
        .iter()
        .copied()
        .filter(|s| *s <= total)
        .collect();
    if grid.last() != Some(&total) {
        grid.push(total);
    }
    grid
}

/// Step 0 followed by `n - 1` steps spaced geometrically from 8 to `total`,
/// rounded to the nearest integer. Collisions after rounding are dropped,
/// so short runs can yield fewer than `n` steps.
pub fn log_grid(total: u64, n: usize) -> Vec<u64> {
    if total == 0 || n <= 1 {
        return vec![total];
    }
    let mut grid = vec![0];
    let start = LOG_GRID_START.min(total as f64);
    let last = n - 2;
    for i in 0..=last {
        let step = if last == 0 {
            total
        } else {
            let frac = i as f64 / last as f64;
            (start * (total as f64 / start).powf(frac)).round() as u64
        };
        if grid.last().is_some_and(|&p| p < step) {
            grid.push(step);
        }
    }
    if grid.last() != Some(&total) {
        grid.push(total);
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_cuts_and_appends() {
        assert_eq!(default_grid(8000), DEFAULT_GRID.to_vec());
        assert_eq!(default_grid(2000), vec![0, 8, 32, 128, 512, 2000]);
        assert_eq!(default_grid(100), vec![0, 8, 32, 100]);
        assert_eq!(default_grid(0), vec![0]);
    }

    #[test]
    fn seven_log_spaced_checkpoints() {
        assert_eq!(log_grid(2000, 7), vec![0, 8, 24, 73, 220, 663, 2000]);
        assert_eq!(log_grid(8000, 7), vec![0, 8, 32, 127, 505, 2010, 8000]);
    }

    #[test]
    fn short_runs_collapse() {
        assert_eq!(log_grid(0, 7), vec![0]);
        assert_eq!(log_grid(3, 7), vec![0, 3]);
        assert_eq!(log_grid(2000, 2), vec![0, 2000]);
        assert_eq!(log_grid(2000, 1), vec![2000]);
    }
}
