//! Histogram peak significance.
//!
//! A peak is significant when its pooled neighborhood count clears an
//! absolute minimum and the peak cell dominates the background, taken as the
//! median of the nonzero cells outside the neighborhood. Dominance is judged
//! cell against cell so that pooling nine noise cells cannot outvote a
//! one-cell median. Both detection paths use this
//! rule: the spectral path on a 1-D frequency histogram, the pulse path on a
//! 2-D period–duration grid.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SignificanceConfig {
    pub min_count: u32,
    pub dominance_ratio: f64,
    /// Chebyshev radius, in bins, pooled with the peak cell.
    pub neighborhood: usize,
}

impl SignificanceConfig {
    /// Defaults for the 1-D frequency histogram.
    pub fn frequency_default() -> Self {
        Self {
            min_count: 6,
            dominance_ratio: 3.0,
            neighborhood: 1,
        }
    }

    /// Defaults for the 2-D period–duration grid.
    pub fn pulse_default() -> Self {
        Self {
            min_count: 5,
            ..Self::frequency_default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_count < 2 {
            return Err(Error::InvalidConfig(format!(
                "significance min_count must be >= 2, got {}",
                self.min_count
            )));
        }
        if !(self.dominance_ratio > 1.0) {
            return Err(Error::InvalidConfig(format!(
                "significance dominance_ratio must be > 1, got {}",
                self.dominance_ratio
            )));
        }
        Ok(())
    }
}

impl Default for SignificanceConfig {
    fn default() -> Self {
        Self::frequency_default()
    }
}

/// Row-major view of a count grid. A 1-D histogram is a single row.
#[derive(Debug, Clone, Copy)]
pub struct CountGrid<'a> {
    counts: &'a [u32],
    rows: usize,
    cols: usize,
}

impl<'a> CountGrid<'a> {
    pub fn new(counts: &'a [u32], rows: usize, cols: usize) -> Self {
        assert_eq!(counts.len(), rows * cols, "grid shape mismatch");
        Self { counts, rows, cols }
    }

    pub fn one_dim(counts: &'a [u32]) -> Self {
        Self::new(counts, 1, counts.len())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.counts[row * self.cols + col]
    }

    /// Row-major index of the largest cell inside `region`; ties go to the
    /// lowest index. `None` if the region is empty.
    pub fn argmax(&self, region: &Region) -> Option<(usize, usize)> {
        let mut best: Option<((usize, usize), u32)> = None;
        for r in region.rows.clone() {
            for c in region.cols.clone() {
                let v = self.get(r, c);
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some(((r, c), v));
                }
            }
        }
        best.map(|(idx, _)| idx)
    }
}

/// Index ranges a search is restricted to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region {
    pub rows: Range<usize>,
    pub cols: Range<usize>,
}

impl Region {
    pub fn whole(grid: &CountGrid<'_>) -> Self {
        Self {
            rows: 0..grid.rows,
            cols: 0..grid.cols,
        }
    }

    pub fn columns(cols: Range<usize>) -> Self {
        Self { rows: 0..1, cols }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SignificantPeak {
    pub row: usize,
    pub col: usize,
    pub pooled: u32,
}

fn median_or_one(values: &mut [u32]) -> f64 {
    if values.is_empty() {
        return 1.0;
    }
    values.sort_unstable();
    let n = values.len();
    if n % 2 == 1 {
        f64::from(values[n / 2])
    } else {
        0.5 * (f64::from(values[n / 2 - 1]) + f64::from(values[n / 2]))
    }
}

/// Returns the arg-max cell within `restrict` (whole grid when `None`) if it
/// passes the significance rule.
pub fn significant_peak(
    grid: &CountGrid<'_>,
    cfg: &SignificanceConfig,
    restrict: Option<&Region>,
) -> Option<SignificantPeak> {
    let whole = Region::whole(grid);
    let region = restrict.unwrap_or(&whole);
    debug_assert!(region.rows.end <= grid.rows && region.cols.end <= grid.cols);
    let (row, col) = grid.argmax(region)?;
    let peak = grid.get(row, col);
    if peak == 0 {
        return None;
    }
    let k = cfg.neighborhood;
    let in_hood = |r: usize, c: usize| r.abs_diff(row) <= k && c.abs_diff(col) <= k;

    let mut pooled = 0u32;
    let mut background = Vec::new();
    for r in 0..grid.rows {
        for c in 0..grid.cols {
            let v = grid.get(r, c);
            if in_hood(r, c) {
                pooled += v;
            } else if v > 0 {
                background.push(v);
            }
        }
    }
    let background = median_or_one(&mut background);
    let significant =
        pooled >= cfg.min_count && f64::from(peak) >= cfg.dominance_ratio * background;
    significant.then_some(SignificantPeak { row, col, pooled })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn cfg() -> SignificanceConfig {
        SignificanceConfig::frequency_default()
    }

    #[test]
    fn all_zero_grid_has_no_peak() {
        let counts = [0u32; 9];
        assert_eq!(
            significant_peak(&CountGrid::new(&counts, 3, 3), &cfg(), None),
            None
        );
    }

    #[test]
    fn lone_cell_is_significant() {
        let mut counts = [0u32; 25];
        counts[12] = 12;
        let peak = significant_peak(&CountGrid::new(&counts, 5, 5), &cfg(), None).unwrap();
        assert_eq!((peak.row, peak.col, peak.pooled), (2, 2, 12));
    }

    #[test]
    fn uniform_grid_is_not_significant() {
        let counts = [4u32; 36];
        assert_eq!(
            significant_peak(&CountGrid::new(&counts, 6, 6), &cfg(), None),
            None
        );
    }

    #[test]
    fn ties_break_toward_lower_index() {
        let counts = [1, 7, 1, 1, 1, 7, 1];
        let c = SignificanceConfig {
            neighborhood: 0,
            ..cfg()
        };
        let peak = significant_peak(&CountGrid::one_dim(&counts), &c, None).unwrap();
        assert_eq!(peak.col, 1);
    }

    #[test]
    fn restriction_limits_the_search() {
        let counts = [0, 0, 20, 0, 0, 0, 8, 0, 0];
        let grid = CountGrid::one_dim(&counts);
        let peak = significant_peak(&grid, &cfg(), Some(&Region::columns(5..9)));
        // background median is 20, so 8 does not dominate
        assert_eq!(peak, None);
        let counts = [0, 0, 1, 0, 0, 0, 8, 0, 0];
        let peak = significant_peak(
            &CountGrid::one_dim(&counts),
            &cfg(),
            Some(&Region::columns(5..9)),
        );
        assert_eq!(peak.map(|p| p.col), Some(6));
    }

    #[test]
    fn neighbors_pool_into_the_peak() {
        let counts = [0, 0, 3, 4, 0, 0, 0, 1];
        let peak = significant_peak(&CountGrid::one_dim(&counts), &cfg(), None).unwrap();
        assert_eq!((peak.col, peak.pooled), (3, 7));
    }

    #[test]
    fn config_validation() {
        assert!(cfg().validate().is_ok());
        assert!(SignificanceConfig {
            min_count: 1,
            ..cfg()
        }
        .validate()
        .is_err());
        assert!(SignificanceConfig {
            dominance_ratio: 1.0,
            ..cfg()
        }
        .validate()
        .is_err());
    }

    proptest! {
        #[test]
        fn permutation_equivariance(
            values in proptest::collection::hash_set(1u32..500, 2..30),
            seed in any::<u64>(),
        ) {
            let counts: Vec<u32> = values.into_iter().collect();
            let n = counts.len();
            // deterministic shuffle from the seed
            let mut perm: Vec<usize> = (0..n).collect();
            let mut state = seed | 1;
            for i in (1..n).rev() {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                perm.swap(i, (state % (i as u64 + 1)) as usize);
            }
            let mut permuted = vec![0u32; n];
            for (i, &p) in perm.iter().enumerate() {
                permuted[p] = counts[i];
            }
            let c = SignificanceConfig { neighborhood: 0, min_count: 2, dominance_ratio: 1.5 };
            let a = significant_peak(&CountGrid::one_dim(&counts), &c, None);
            let b = significant_peak(&CountGrid::one_dim(&permuted), &c, None);
            prop_assert_eq!(a.map(|p| perm[p.col]), b.map(|p| p.col));
            prop_assert_eq!(a.map(|p| p.pooled), b.map(|p| p.pooled));
        }

        #[test]
        fn adding_to_winner_keeps_significance(
            counts in proptest::collection::vec(0u32..8, 16),
            extra in 1u32..20,
        ) {
            let grid = CountGrid::new(&counts, 4, 4);
            if let Some(peak) = significant_peak(&grid, &cfg(), None) {
                let mut boosted = counts.clone();
                boosted[peak.row * 4 + peak.col] += extra;
                let again = significant_peak(&CountGrid::new(&boosted, 4, 4), &cfg(), None);
                prop_assert!(again.is_some());
                prop_assert_eq!(again.map(|p| (p.row, p.col)), Some((peak.row, peak.col)));
            }
        }

        #[test]
        fn deterministic(counts in proptest::collection::vec(0u32..8, 25)) {
            let grid = CountGrid::new(&counts, 5, 5);
            prop_assert_eq!(
                significant_peak(&grid, &cfg(), None),
                significant_peak(&grid, &cfg(), None)
            );
        }
    }
}
