//! Leak-band energy envelope feeding the z-score detector.
//!
//! Leak pulses are bursts of a low-frequency carrier, so their raw samples
//! swing through zero and cannot hold a z-score flag. The front end splits
//! the signal with a linear-phase low-pass FIR, squares and smooths the
//! in-band part, and tracks the out-of-band energy separately. Regular water
//! use shows up out of band (fast piston); its abrupt on/off edges splatter
//! into the leak band, so envelope points within `guard_s` of a consumption
//! edge are marked as blanked.

use std::collections::VecDeque;
use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::RunningMedian;
use crate::sample::Sample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvelopeConfig {
    /// Low-pass cutoff separating leak band from consumption band, Hz.
    pub band_cutoff_hz: f64,
    /// Odd FIR length.
    pub filter_taps: usize,
    /// Moving-average length applied to the squared band signals, seconds.
    pub smoothing_s: f64,
    /// Out-of-band energy must exceed this multiple of its running floor to
    /// count as consumption.
    pub consumption_ratio: f64,
    /// Span of the running out-of-band floor estimate, seconds.
    pub floor_window_s: f64,
    /// Quantile of the out-of-band energy used as the floor.
    pub floor_quantile: f64,
    /// Half-width of the blanking interval around each consumption edge,
    /// seconds.
    pub guard_s: f64,
}

impl Default for EnvelopeConfig {
    fn default() -> Self {
        Self {
            band_cutoff_hz: 0.45,
            filter_taps: 111,
            smoothing_s: 4.0,
            consumption_ratio: 8.0,
            floor_window_s: 1200.0,
            floor_quantile: 0.25,
            guard_s: 35.0,
        }
    }
}

impl EnvelopeConfig {
    pub fn validate(&self, sampling_period: f64) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(format!("pulse envelope: {msg}")));
        let nyquist = 0.5 / sampling_period;
        if !(self.band_cutoff_hz > 0.0 && self.band_cutoff_hz < nyquist) {
            return fail(format!("band_cutoff_hz must lie in (0, {nyquist})"));
        }
        if self.filter_taps < 3 || self.filter_taps.is_multiple_of(2) {
            return fail(format!(
                "filter_taps must be odd and >= 3, got {}",
                self.filter_taps
            ));
        }
        if !(self.smoothing_s >= sampling_period) {
            return fail("smoothing_s must cover at least one sample".into());
        }
        if !(self.consumption_ratio > 1.0) {
            return fail("consumption_ratio must exceed 1".into());
        }
        if !(self.floor_window_s >= sampling_period) {
            return fail("floor_window_s must cover at least one sample".into());
        }
        if !(0.0..=1.0).contains(&self.floor_quantile) {
            return fail("floor_quantile must lie in [0, 1]".into());
        }
        if !(self.guard_s >= 0.0) {
            return fail("guard_s must be non-negative".into());
        }
        Ok(())
    }
}

/// Blackman-windowed sinc low-pass, unit DC gain.
pub fn lowpass_taps(taps: usize, cutoff_hz: f64, sampling_period: f64) -> Vec<f64> {
    let fc = cutoff_hz * sampling_period;
    let m = (taps - 1) as f64;
    let mut h: Vec<f64> = (0..taps)
        .map(|i| {
            let x = i as f64 - m / 2.0;
            let sinc = if x == 0.0 {
                2.0 * fc
            } else {
                (TAU * fc * x).sin() / (PI * x)
            };
            let w =
                0.42 - 0.5 * (TAU * i as f64 / m).cos() + 0.08 * (2.0 * TAU * i as f64 / m).cos();
            sinc * w
        })
        .collect();
    let gain: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= gain);
    h
}

#[derive(Debug, Clone)]
struct MovingMean {
    len: usize,
    values: VecDeque<f64>,
}

impl MovingMean {
    fn new(len: usize) -> Self {
        Self {
            len,
            values: VecDeque::with_capacity(len),
        }
    }

    fn push(&mut self, v: f64) -> Option<f64> {
        if self.values.len() == self.len {
            self.values.pop_front();
        }
        self.values.push_back(v);
        (self.values.len() == self.len).then(|| self.values.iter().sum::<f64>() / self.len as f64)
    }

    fn clear(&mut self) {
        self.values.clear();
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopePoint {
    /// Time of the input sample this point is centered on.
    pub timestamp: f64,
    /// Smoothed leak-band power.
    pub value: f64,
    /// Out-of-band (consumption band) smoothed power.
    pub consumption_power: f64,
    /// Near a consumption edge; must not be judged.
    pub blanked: bool,
}

#[derive(Debug, Clone)]
pub struct EnvelopeFrontEnd {
    taps: Vec<f64>,
    history: VecDeque<f64>,
    times: VecDeque<f64>,
    time_delay: usize,
    in_band: MovingMean,
    out_band: MovingMean,
    floor: RunningMedian,
    floor_quantile: f64,
    consumption_ratio: f64,
    guard: usize,
    consuming: bool,
    index: u64,
    last_edge: Option<u64>,
    pending: VecDeque<(u64, f64, f64, f64)>,
}

impl EnvelopeFrontEnd {
    pub fn new(cfg: &EnvelopeConfig, sampling_period: f64) -> Result<Self> {
        cfg.validate(sampling_period)?;
        let smoothing = ((cfg.smoothing_s / sampling_period).round() as usize).max(1);
        let floor_len = ((cfg.floor_window_s / sampling_period).round() as usize).max(1);
        Ok(Self {
            taps: lowpass_taps(cfg.filter_taps, cfg.band_cutoff_hz, sampling_period),
            history: VecDeque::with_capacity(cfg.filter_taps),
            times: VecDeque::new(),
            time_delay: (cfg.filter_taps - 1) / 2 + (smoothing - 1) / 2,
            in_band: MovingMean::new(smoothing),
            out_band: MovingMean::new(smoothing),
            floor: RunningMedian::new(floor_len),
            floor_quantile: cfg.floor_quantile,
            consumption_ratio: cfg.consumption_ratio,
            guard: (cfg.guard_s / sampling_period).round() as usize,
            consuming: false,
            index: 0,
            last_edge: None,
            pending: VecDeque::new(),
        })
    }

    /// Samples between an input and the envelope point centered on it.
    pub fn latency_samples(&self) -> usize {
        self.taps.len() - 1 + self.in_band.len - 1 + self.guard
    }

    pub fn push(&mut self, sample: Sample) -> Option<EnvelopePoint> {
        if self.history.len() == self.taps.len() {
            self.history.pop_front();
        }
        self.history.push_back(sample.magnitude);
        self.times.push_back(sample.timestamp);
        if self.times.len() > self.time_delay + 1 {
            self.times.pop_front();
        }
        if self.history.len() < self.taps.len() {
            return None;
        }
        let low: f64 = self
            .history
            .iter()
            .zip(&self.taps)
            .map(|(x, h)| x * h)
            .sum();
        let center = self.history[(self.taps.len() - 1) / 2];
        let high = center - low;
        let (Some(power), Some(consumption_power)) = (
            self.in_band.push(low * low),
            self.out_band.push(high * high),
        ) else {
            return None;
        };
        let timestamp = self.times[0];

        self.floor.push(consumption_power);
        let floor = self.floor.quantile(self.floor_quantile).unwrap_or(0.0);
        let consuming =
            consumption_power > self.consumption_ratio * floor && consumption_power > power;
        let idx = self.index;
        self.index += 1;
        if consuming != self.consuming {
            self.consuming = consuming;
            self.last_edge = Some(idx);
        }

        self.pending
            .push_back((idx, timestamp, power, consumption_power));
        if self.pending.len() <= self.guard {
            return None;
        }
        let (m, timestamp, value, consumption_power) = self.pending.pop_front()?;
        let blanked = self
            .last_edge
            .is_some_and(|edge| edge + self.guard as u64 >= m);
        Some(EnvelopePoint {
            timestamp,
            value,
            consumption_power,
            blanked,
        })
    }

    pub fn reset(&mut self) {
        self.history.clear();
        self.times.clear();
        self.in_band.clear();
        self.out_band.clear();
        self.floor.clear();
        self.consuming = false;
        self.index = 0;
        self.last_edge = None;
        self.pending.clear();
    }
}
