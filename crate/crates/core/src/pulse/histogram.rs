use serde::{Deserialize, Serialize};

use super::assemble::Pulse;

/// Logarithmically spaced bins over a closed range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogBins {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl LogBins {
    pub fn new(lo: f64, hi: f64, count: usize) -> Self {
        assert!(lo > 0.0 && hi > lo && count > 0);
        Self { lo, hi, count }
    }

    /// Bin holding `v`, or `None` outside `[lo, hi]`.
    pub fn bin_of(&self, v: f64) -> Option<usize> {
        if !(v >= self.lo && v <= self.hi) {
            return None;
        }
        let pos = (v / self.lo).ln() / (self.hi / self.lo).ln() * self.count as f64;
        Some((pos.floor() as usize).min(self.count - 1))
    }

    pub fn edge(&self, i: usize) -> f64 {
        self.lo * (self.hi / self.lo).powf(i as f64 / self.count as f64)
    }

    /// Geometric center of bin `i`.
    pub fn center(&self, i: usize) -> f64 {
        (self.edge(i) * self.edge(i + 1)).sqrt()
    }
}

/// Period–duration count grid: rows are duration bins, columns period bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseHistogram {
    pub duration_bins: LogBins,
    pub period_bins: LogBins,
    pub counts: Vec<u32>,
    pub pulses_seen: u64,
    pub epoch_start: f64,
}

impl PulseHistogram {
    pub const DURATION_BINS: usize = 16;
    pub const PERIOD_BINS: usize = 23;

    pub fn new(duration_range: [f64; 2], period_range: [f64; 2], epoch_start: f64) -> Self {
        let duration_bins = LogBins::new(duration_range[0], duration_range[1], Self::DURATION_BINS);
        let period_bins = LogBins::new(period_range[0], period_range[1], Self::PERIOD_BINS);
        Self {
            counts: vec![0; duration_bins.count * period_bins.count],
            duration_bins,
            period_bins,
            pulses_seen: 0,
            epoch_start,
        }
    }

    pub fn rows(&self) -> usize {
        self.duration_bins.count
    }

    pub fn cols(&self) -> usize {
        self.period_bins.count
    }

    pub fn get(&self, duration_bin: usize, period_bin: usize) -> u32 {
        self.counts[duration_bin * self.cols() + period_bin]
    }

    /// Records `pulse`. With a previous pulse start, the start-to-start
    /// period and the duration are binned if both fall in range. Returns the
    /// cell incremented, if any.
    pub fn accumulate(
        &mut self,
        pulse: &Pulse,
        previous_start: Option<f64>,
    ) -> Option<(usize, usize)> {
        self.pulses_seen += 1;
        let period = pulse.start - previous_start?;
        let row = self.duration_bins.bin_of(pulse.duration)?;
        let col = self.period_bins.bin_of(period)?;
        let cols = self.cols();
        self.counts[row * cols + col] += 1;
        Some((row, col))
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }

    pub fn clear(&mut self, epoch_start: f64) {
        self.counts.iter_mut().for_each(|c| *c = 0);
        self.pulses_seen = 0;
        self.epoch_start = epoch_start;
    }

    pub fn merge(&mut self, other: &PulseHistogram) {
        debug_assert_eq!(self.counts.len(), other.counts.len());
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.pulses_seen += other.pulses_seen;
    }
}
