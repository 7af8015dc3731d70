use std::collections::VecDeque;

/// Smoothed z-score detector.
///
/// Keeps the last `lag` filtered values. A value is flagged when it exceeds
/// the window mean by more than `threshold` window standard deviations.
/// Flagged values enter the window damped by `influence`, so a pulse does
/// not immediately drag the baseline up; unflagged values enter as-is.
/// Only positive excursions are flagged.
#[derive(Debug, Clone)]
pub struct ZScoreState {
    lag: usize,
    threshold: f64,
    influence: f64,
    window: VecDeque<f64>,
    mean: f64,
    std: f64,
    last_z: f64,
}

impl ZScoreState {
    pub fn new(lag: usize, threshold: f64, influence: f64) -> Self {
        assert!(lag > 0, "lag must be positive");
        assert!(threshold > 0.0, "threshold must be positive");
        assert!(
            (0.0..=1.0).contains(&influence),
            "influence must lie in [0, 1]"
        );
        Self {
            lag,
            threshold,
            influence,
            window: VecDeque::with_capacity(lag + 1),
            mean: 0.0,
            std: 0.0,
            last_z: 0.0,
        }
    }

    pub fn is_warm(&self) -> bool {
        self.window.len() == self.lag
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn std(&self) -> f64 {
        self.std
    }

    /// z-score of the most recent value against the preceding window
    /// (0 during warm-up or when the window is flat).
    pub fn last_z(&self) -> f64 {
        self.last_z
    }

    fn recompute(&mut self) {
        let n = self.window.len() as f64;
        let mean = self.window.iter().sum::<f64>() / n;
        let var = self
            .window
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / n;
        self.mean = mean;
        self.std = var.sqrt();
    }

    /// Feeds one value and reports whether it is flagged.
    pub fn step(&mut self, x: f64) -> bool {
        if !self.is_warm() {
            self.window.push_back(x);
            self.last_z = 0.0;
            if self.is_warm() {
                self.recompute();
            }
            return false;
        }
        let deviation = x - self.mean;
        self.last_z = if self.std > 0.0 {
            deviation / self.std
        } else {
            0.0
        };
        let flagged = self.std > 0.0 && deviation > self.threshold * self.std;
        let filtered = if flagged {
            let previous = *self.window.back().expect("warm window");
            self.influence * x + (1.0 - self.influence) * previous
        } else {
            x
        };
        self.window.pop_front();
        self.window.push_back(filtered);
        self.recompute();
        flagged
    }

    pub fn reset(&mut self) {
        self.window.clear();
        self.mean = 0.0;
        self.std = 0.0;
        self.last_z = 0.0;
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    use super::*;

    /// Textbook batch formulation: recomputes mean and std from the filtered
    /// series for every index.
    pub(crate) fn direct_flags(y: &[f64], lag: usize, threshold: f64, influence: f64) -> Vec<bool> {
        let stats = |w: &[f64]| {
            let n = w.len() as f64;
            let m = w.iter().sum::<f64>() / n;
            let v = w.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
            (m, v.sqrt())
        };
        let mut flags = vec![false; y.len()];
        if y.len() < lag {
            return flags;
        }
        let mut filtered = y[..lag].to_vec();
        let (mut avg, mut sd) = stats(&filtered[..lag]);
        for i in lag..y.len() {
            if sd > 0.0 && y[i] - avg > threshold * sd {
                flags[i] = true;
                let prev = filtered[i - 1];
                filtered.push(influence * y[i] + (1.0 - influence) * prev);
            } else {
                filtered.push(y[i]);
            }
            (avg, sd) = stats(&filtered[i + 1 - lag..=i]);
        }
        flags
    }

    fn streaming_flags(y: &[f64], lag: usize, threshold: f64, influence: f64) -> Vec<bool> {
        let mut z = ZScoreState::new(lag, threshold, influence);
        y.iter().map(|&v| z.step(v)).collect()
    }

    #[test]
    fn constant_never_flags() {
        let mut z = ZScoreState::new(20, 3.0, 0.1);
        assert!((0..1000).all(|_| !z.step(4.2)));
    }

    #[test]
    fn spike_after_quiet_noise_flags() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let mut y: Vec<f64> = (0..20).map(|_| noise.sample(&mut rng)).collect();
        y.push(10.0);
        let flags = streaming_flags(&y, 20, 3.0, 0.1);
        assert!(flags[..20].iter().all(|f| !f));
        assert!(flags[20]);
        assert_eq!(flags, direct_flags(&y, 20, 3.0, 0.1));
    }

    #[test]
    fn held_step_stays_flagged_for_debounce() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = Normal::new(0.0, 0.1).unwrap();
        let mut y: Vec<f64> = (0..40).map(|_| noise.sample(&mut rng)).collect();
        y.extend((0..40).map(|_| 5.0 + noise.sample(&mut rng)));
        let flags = streaming_flags(&y, 20, 3.0, 0.1);
        assert_eq!(flags, direct_flags(&y, 20, 3.0, 0.1));
        let run = flags[40..].iter().take_while(|&&f| f).count();
        assert!(run >= 4, "run {run}");
    }

    #[test]
    fn matches_direct_recomputation() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noise = Normal::new(0.0, 1.0).unwrap();
            let y: Vec<f64> = (0..2000)
                .map(|i| noise.sample(&mut rng) + if (i / 50) % 7 == 3 { 4.0 } else { 0.0 })
                .collect();
            for influence in [0.0, 0.1, 0.5, 1.0] {
                assert_eq!(
                    streaming_flags(&y, 20, 3.0, influence),
                    direct_flags(&y, 20, 3.0, influence)
                );
            }
        }
    }

    #[test]
    fn scale_does_not_change_flags() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::<f64>::new(0.0, 1.0).unwrap();
        let y: Vec<f64> = (0..3000)
            .map(|i| noise.sample(&mut rng).abs() + if i % 300 < 30 { 3.0 } else { 0.0 })
            .collect();
        let base = streaming_flags(&y, 20, 3.0, 0.1);
        assert!(base.iter().any(|&f| f));
        for c in [0.25, 3.0, 1e4] {
            let scaled: Vec<f64> = y.iter().map(|v| v * c).collect();
            assert_eq!(streaming_flags(&scaled, 20, 3.0, 0.1), base);
        }
    }
}
