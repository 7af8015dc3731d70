//! Narrow sub-band power front end.
//!
//! The leak band is covered by a bank of complex band-pass filters (a
//! Blackman-windowed sinc low-pass shifted to each center). Each band's
//! power is smoothed and divided by its own running median, so a ratio of 1
//! is the local noise level of that band. A pulse of leak carrier lifts one
//! band well above its floor while broadband noise lifts all of them a
//! little. Consumption edges are blanked with the same out-of-band detector
//! the envelope path uses.

use std::collections::VecDeque;
use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::envelope::{lowpass_taps, EnvelopeConfig, EnvelopeFrontEnd};
use crate::error::{Error, Result};
use crate::ingest::RunningMedian;
use crate::sample::Sample;

/// Floor entries needed before a band ratio is trusted.
const MIN_FLOOR_POINTS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SubbandConfig {
    /// Center of the lowest band, Hz.
    pub band_lo_hz: f64,
    /// Center of the highest band, Hz.
    pub band_hi_hz: f64,
    /// Number of bands, centers spaced linearly.
    pub bands: usize,
    /// Odd prototype filter length.
    pub filter_taps: usize,
    /// Prototype low-pass cutoff, i.e. half the band width, Hz.
    pub bandwidth_hz: f64,
    /// Moving-average length applied to band power, seconds.
    pub smoothing_s: f64,
    /// Span of the running floor, seconds.
    pub floor_window_s: f64,
    /// Floor is updated once per this many seconds.
    pub floor_update_s: f64,
    /// A band stays flagged while its power ratio is at least this.
    pub hold_ratio: f64,
    /// A candidate pulse is kept only if its peak ratio reaches this.
    pub onset_ratio: f64,
    /// Pulse edges are where the ratio crosses this fraction of the way from
    /// the floor to the pulse's peak.
    pub extent_fraction: f64,
}

impl Default for SubbandConfig {
    fn default() -> Self {
        Self {
            band_lo_hz: 0.05,
            band_hi_hz: 0.375,
            bands: 16,
            filter_taps: 121,
            bandwidth_hz: 0.025,
            smoothing_s: 20.0,
            floor_window_s: 1200.0,
            floor_update_s: 2.0,
            hold_ratio: 2.0,
            onset_ratio: 10.0,
            extent_fraction: 0.35,
        }
    }
}

impl SubbandConfig {
    pub fn validate(&self, sampling_period: f64) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(format!("pulse subband: {msg}")));
        let nyquist = 0.5 / sampling_period;
        if self.bands == 0 {
            return fail("bands must be at least 1".into());
        }
        if !(self.band_lo_hz > 0.0
            && self.band_hi_hz >= self.band_lo_hz
            && self.band_hi_hz < nyquist)
        {
            return fail(format!(
                "band centers must satisfy 0 < lo <= hi < {nyquist}"
            ));
        }
        if self.filter_taps < 3 || self.filter_taps.is_multiple_of(2) {
            return fail(format!(
                "filter_taps must be odd and >= 3, got {}",
                self.filter_taps
            ));
        }
        if !(self.bandwidth_hz > 0.0 && self.bandwidth_hz < nyquist) {
            return fail(format!("bandwidth_hz must lie in (0, {nyquist})"));
        }
        if !(self.smoothing_s >= sampling_period) {
            return fail("smoothing_s must cover at least one sample".into());
        }
        if !(self.floor_update_s >= sampling_period && self.floor_window_s >= self.floor_update_s) {
            return fail("need sampling period <= floor_update_s <= floor_window_s".into());
        }
        if !(self.hold_ratio > 0.0 && self.onset_ratio >= self.hold_ratio) {
            return fail("need 0 < hold_ratio <= onset_ratio".into());
        }
        if !(self.extent_fraction > 0.0 && self.extent_fraction < 1.0) {
            return fail("extent_fraction must lie in (0, 1)".into());
        }
        Ok(())
    }

    pub fn centers(&self) -> Vec<f64> {
        if self.bands == 1 {
            return vec![self.band_lo_hz];
        }
        let step = (self.band_hi_hz - self.band_lo_hz) / (self.bands - 1) as f64;
        (0..self.bands)
            .map(|k| self.band_lo_hz + step * k as f64)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct SubbandFrontEnd {
    centers: Vec<f64>,
    taps: usize,
    // band-major complex coefficients
    re: Vec<f64>,
    im: Vec<f64>,
    // doubled ring so the last `taps` inputs are always one slice
    ring: Vec<f64>,
    pos: usize,
    filled: usize,
    smoothing: usize,
    power: Vec<VecDeque<f64>>,
    floors: Vec<RunningMedian>,
    floor_every: u64,
    count: u64,
    times: VecDeque<f64>,
    delay: usize,
    blanking: EnvelopeFrontEnd,
    blank_queue: VecDeque<(f64, bool)>,
    stat_times: VecDeque<f64>,
    stats: VecDeque<f64>,
    current: Vec<f64>,
}

impl SubbandFrontEnd {
    pub fn new(
        cfg: &SubbandConfig,
        blanking: &EnvelopeConfig,
        sampling_period: f64,
    ) -> Result<Self> {
        cfg.validate(sampling_period)?;
        let centers = cfg.centers();
        let proto = lowpass_taps(cfg.filter_taps, cfg.bandwidth_hz, sampling_period);
        let mut re = Vec::with_capacity(centers.len() * proto.len());
        let mut im = Vec::with_capacity(centers.len() * proto.len());
        for &f in &centers {
            for (i, &h) in proto.iter().enumerate() {
                let a = TAU * f * sampling_period * i as f64;
                re.push(h * a.cos());
                im.push(-h * a.sin());
            }
        }
        let smoothing = ((cfg.smoothing_s / sampling_period).round() as usize).max(1);
        let floor_every = ((cfg.floor_update_s / sampling_period).round() as u64).max(1);
        let floor_len = ((cfg.floor_window_s / cfg.floor_update_s).round() as usize).max(1);
        let nb = centers.len();
        Ok(Self {
            taps: cfg.filter_taps,
            re,
            im,
            ring: vec![0.0; 2 * cfg.filter_taps],
            pos: 0,
            filled: 0,
            smoothing,
            power: vec![VecDeque::with_capacity(smoothing + 1); nb],
            floors: (0..nb).map(|_| RunningMedian::new(floor_len)).collect(),
            floor_every,
            count: 0,
            times: VecDeque::new(),
            delay: (cfg.filter_taps - 1) / 2 + (smoothing - 1) / 2,
            blanking: EnvelopeFrontEnd::new(blanking, sampling_period)?,
            blank_queue: VecDeque::new(),
            stat_times: VecDeque::new(),
            stats: VecDeque::new(),
            current: vec![0.0; nb],
            centers,
        })
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    /// Feeds one sample. `emit(timestamp, blanked, ratios)` is called for
    /// each aligned point that becomes ready, `ratios[k]` being band `k`'s
    /// smoothed power over its running median.
    pub fn push(&mut self, sample: Sample, mut emit: impl FnMut(f64, bool, &[f64])) {
        if let Some(p) = self.blanking.push(sample) {
            self.blank_queue.push_back((p.timestamp, p.blanked));
        }
        self.ring[self.pos] = sample.magnitude;
        self.ring[self.pos + self.taps] = sample.magnitude;
        self.pos = (self.pos + 1) % self.taps;
        self.filled = (self.filled + 1).min(self.taps);
        self.times.push_back(sample.timestamp);
        if self.times.len() > self.delay + 1 {
            self.times.pop_front();
        }
        if self.filled < self.taps {
            return;
        }
        self.count += 1;
        let window = &self.ring[self.pos..self.pos + self.taps];
        let mut full = true;
        for k in 0..self.centers.len() {
            let (cr, ci) = (
                &self.re[k * self.taps..(k + 1) * self.taps],
                &self.im[k * self.taps..(k + 1) * self.taps],
            );
            let (mut a, mut b) = (0.0, 0.0);
            for ((x, c), d) in window.iter().zip(cr).zip(ci) {
                a += x * c;
                b += x * d;
            }
            let q = &mut self.power[k];
            q.push_back(a * a + b * b);
            if q.len() > self.smoothing {
                q.pop_front();
            }
            if q.len() < self.smoothing {
                full = false;
                continue;
            }
            let p = q.iter().sum::<f64>() / self.smoothing as f64;
            if self.count.is_multiple_of(self.floor_every) {
                self.floors[k].push(p);
            }
            self.current[k] = self.floors[k].median().map_or(0.0, |m| p / m);
        }
        if !full || self.floors[0].len() < MIN_FLOOR_POINTS {
            return;
        }
        self.stat_times.push_back(self.times[0]);
        self.stats.extend(self.current.iter().copied());

        let nb = self.centers.len();
        while let (Some(&ts), Some(&(tb, blanked))) =
            (self.stat_times.front(), self.blank_queue.front())
        {
            if tb < ts {
                self.blank_queue.pop_front();
                continue;
            }
            self.stat_times.pop_front();
            let ratios: Vec<f64> = self.stats.drain(..nb).collect();
            if tb > ts {
                continue;
            }
            self.blank_queue.pop_front();
            emit(ts, blanked, &ratios);
        }
    }

    pub fn reset(&mut self) {
        self.ring.iter_mut().for_each(|v| *v = 0.0);
        self.pos = 0;
        self.filled = 0;
        self.power.iter_mut().for_each(VecDeque::clear);
        self.floors.iter_mut().for_each(RunningMedian::clear);
        self.count = 0;
        self.times.clear();
        self.blanking.reset();
        self.blank_queue.clear();
        self.stat_times.clear();
        self.stats.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn collect(
        cfg: &SubbandConfig,
        signal: impl Fn(f64) -> f64,
        n: usize,
    ) -> Vec<(f64, bool, Vec<f64>)> {
        let mut front = SubbandFrontEnd::new(cfg, &EnvelopeConfig::default(), 0.5).unwrap();
        let mut out = Vec::new();
        for i in 0..n {
            let t = i as f64 * 0.5;
            front.push(Sample::new(t, signal(t)), |ts, b, r| {
                out.push((ts, b, r.to_vec()))
            });
        }
        out
    }

    #[test]
    fn centers_span_the_band() {
        let c = SubbandConfig::default().centers();
        assert_eq!(c.len(), 16);
        assert_eq!(c[0], 0.05);
        assert!((c[15] - 0.375).abs() < 1e-12);
    }

    #[test]
    fn burst_lights_its_own_band() {
        let cfg = SubbandConfig::default();
        let noise = Normal::new(0.0, 0.3).unwrap();
        let draws: Vec<f64> = {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            (0..8000).map(|_| noise.sample(&mut rng)).collect()
        };
        // 0.2667 Hz is the eleventh center
        let pts = collect(
            &cfg,
            |t| {
                let burst = if (3000.0..3060.0).contains(&t) {
                    (TAU * 0.2667 * t).sin()
                } else {
                    0.0
                };
                burst + draws[(t * 2.0) as usize]
            },
            8000,
        );
        assert!(!pts.is_empty());
        let mid = pts.iter().find(|p| p.0 == 3030.0).unwrap();
        let best = (0..16)
            .max_by(|&a, &b| mid.2[a].total_cmp(&mid.2[b]))
            .unwrap();
        assert_eq!(best, 10, "{:?}", mid.2);
        assert!(mid.2[10] > cfg.onset_ratio, "{:?}", mid.2);
        let loudest_quiet = pts
            .iter()
            .filter(|p| !(2900.0..3200.0).contains(&p.0))
            .flat_map(|p| p.2.iter().copied())
            .fold(0.0, f64::max);
        assert!(loudest_quiet < cfg.onset_ratio, "{loudest_quiet}");
    }

    #[test]
    fn points_are_time_ordered_and_contiguous() {
        let pts = collect(&SubbandConfig::default(), |t| (TAU * 0.1 * t).sin(), 3000);
        for w in pts.windows(2) {
            assert_eq!(w[1].0 - w[0].0, 0.5);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let bad = SubbandConfig {
            band_hi_hz: 1.2,
            ..SubbandConfig::default()
        };
        assert!(bad.validate(0.5).is_err());
        let bad = SubbandConfig {
            onset_ratio: 1.0,
            ..SubbandConfig::default()
        };
        assert!(bad.validate(0.5).is_err());
    }
}
