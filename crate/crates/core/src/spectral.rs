//! Continuous-leak path.
//!
//! Samples fill a moving window of `window_len`. Every `spectra_interval`
//! seconds (once the window is full) the window is mean-removed, Hann
//! weighted and transformed; local spectral maxima standing well above the
//! median magnitude are counted into a [`FrequencyHistogram`]. Every
//! `analysis_interval` the histogram is tested for a significant peak in the
//! leak band and then cleared.

use std::collections::VecDeque;
use std::f64::consts::TAU;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{FlowCalibration, FlowEstimate};
use crate::histostats::{significant_peak, CountGrid, Region, SignificanceConfig};
use crate::sample::Sample;

/// Spectral bins below this frequency are never classified as peaks.
pub const DC_GUARD_HZ: f64 = 0.005;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectralConfig {
    pub window_len: usize,
    pub sampling_period: f64,
    pub spectra_interval: f64,
    pub analysis_interval: f64,
    pub leak_band: [f64; 2],
    pub peak_floor_ratio: f64,
    pub histogram_bin_width: f64,
    pub max_peaks_per_spectrum: usize,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            window_len: 2048,
            sampling_period: 0.5,
            spectra_interval: 600.0,
            analysis_interval: 7200.0,
            leak_band: [0.01, 0.4],
            peak_floor_ratio: 5.0,
            histogram_bin_width: 0.01,
            max_peaks_per_spectrum: 5,
        }
    }
}

impl SpectralConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(format!("spectral: {msg}")));
        if !self.window_len.is_power_of_two() || self.window_len < 4 {
            return fail(format!(
                "window_len must be a power of two, got {}",
                self.window_len
            ));
        }
        if !(self.sampling_period > 0.0) {
            return fail("sampling_period must be positive".into());
        }
        let [lo, hi] = self.leak_band;
        if !(lo > 0.0 && hi > lo && hi <= self.nyquist()) {
            return fail(format!(
                "leak_band [{lo}, {hi}] must lie within (0, Nyquist]"
            ));
        }
        if self.window_span() < 2.0 / lo {
            return fail(format!(
                "window span {} s cannot resolve {lo} Hz (needs >= {} s)",
                self.window_span(),
                2.0 / lo
            ));
        }
        if !(self.spectra_interval > 0.0 && self.spectra_interval <= self.analysis_interval) {
            return fail("need 0 < spectra_interval <= analysis_interval".into());
        }
        if !(self.peak_floor_ratio > 0.0) {
            return fail("peak_floor_ratio must be positive".into());
        }
        if !(self.histogram_bin_width > 0.0) {
            return fail("histogram_bin_width must be positive".into());
        }
        if self.max_peaks_per_spectrum == 0 {
            return fail("max_peaks_per_spectrum must be at least 1".into());
        }
        Ok(())
    }

    pub fn window_span(&self) -> f64 {
        self.window_len as f64 * self.sampling_period
    }

    pub fn nyquist(&self) -> f64 {
        0.5 / self.sampling_period
    }

    pub fn bin_spacing(&self) -> f64 {
        1.0 / self.window_span()
    }
}

/// One-sided magnitude spectrum of a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub frequencies: Vec<f64>,
    pub magnitudes: Vec<f64>,
    pub window_end_time: f64,
    /// Energy of the mean-removed, Hann-weighted window in the time domain.
    pub window_energy: f64,
}

impl Spectrum {
    /// Window energy recovered from the magnitudes via Parseval's theorem.
    pub fn spectral_energy(&self) -> f64 {
        let n = 2 * (self.magnitudes.len() - 1);
        let last = self.magnitudes.len() - 1;
        let sum: f64 = self
            .magnitudes
            .iter()
            .enumerate()
            .map(|(k, m)| {
                if k == 0 || k == last {
                    m * m
                } else {
                    2.0 * m * m
                }
            })
            .sum();
        sum / n as f64
    }

    /// Relative disagreement between time- and frequency-domain energy.
    pub fn parseval_error(&self) -> f64 {
        let spectral = self.spectral_energy();
        if self.window_energy == 0.0 {
            return spectral.abs();
        }
        (spectral - self.window_energy).abs() / self.window_energy
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralPeak {
    pub frequency: f64,
    pub magnitude: f64,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Local maxima standing at least `peak_floor_ratio` × median above the
/// spectrum, strongest first, at most `max_peaks_per_spectrum` of them.
pub fn classify_peaks(spectrum: &Spectrum, cfg: &SpectralConfig) -> Vec<SpectralPeak> {
    let m = &spectrum.magnitudes;
    if m.len() < 3 {
        return Vec::new();
    }
    let floor = cfg.peak_floor_ratio * median(m);
    let mut peaks: Vec<SpectralPeak> = (1..m.len() - 1)
        .filter(|&k| spectrum.frequencies[k] >= DC_GUARD_HZ)
        .filter(|&k| m[k] > m[k - 1] && m[k] > m[k + 1] && m[k] >= floor)
        .map(|k| SpectralPeak {
            frequency: spectrum.frequencies[k],
            magnitude: m[k],
        })
        .collect();
    peaks.sort_by(|a, b| {
        b.magnitude
            .total_cmp(&a.magnitude)
            .then(a.frequency.total_cmp(&b.frequency))
    });
    peaks.truncate(cfg.max_peaks_per_spectrum);
    peaks
}

/// Counts of classified peak frequencies over `[0, Nyquist]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyHistogram {
    pub bin_width: f64,
    pub counts: Vec<u32>,
    pub spectra_seen: u64,
    pub epoch_start: f64,
}

impl FrequencyHistogram {
    pub fn new(bin_width: f64, nyquist: f64, epoch_start: f64) -> Self {
        let bins = (nyquist / bin_width - 1e-9).ceil().max(1.0) as usize;
        Self {
            bin_width,
            counts: vec![0; bins],
            spectra_seen: 0,
            epoch_start,
        }
    }

    pub fn for_config(cfg: &SpectralConfig, epoch_start: f64) -> Self {
        Self::new(cfg.histogram_bin_width, cfg.nyquist(), epoch_start)
    }

    /// Bin holding `frequency`; frequencies at Nyquist land in the last bin.
    pub fn bin_of(&self, frequency: f64) -> usize {
        let idx = (frequency / self.bin_width + 1e-9).floor().max(0.0) as usize;
        idx.min(self.counts.len() - 1)
    }

    pub fn bin_center(&self, bin: usize) -> f64 {
        (bin as f64 + 0.5) * self.bin_width
    }

    /// Records one spectrum's peaks.
    pub fn accumulate(&mut self, peaks: &[SpectralPeak]) {
        for p in peaks {
            let bin = self.bin_of(p.frequency);
            self.counts[bin] += 1;
        }
        self.spectra_seen += 1;
    }

    /// Bins overlapping the closed band `[lo, hi]`.
    pub fn band_bins(&self, [lo, hi]: [f64; 2]) -> std::ops::Range<usize> {
        self.bin_of(lo)..self.bin_of(hi) + 1
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }

    pub fn clear(&mut self, epoch_start: f64) {
        self.counts.iter_mut().for_each(|c| *c = 0);
        self.spectra_seen = 0;
        self.epoch_start = epoch_start;
    }

    /// Adds another histogram's counts (same binning) into this one.
    pub fn merge(&mut self, other: &FrequencyHistogram) {
        debug_assert_eq!(self.counts.len(), other.counts.len());
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.spectra_seen += other.spectra_seen;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousLeakVerdict {
    pub peak_frequency: f64,
    pub estimated_flow: FlowEstimate,
    pub support: u32,
    pub spectra_seen: u64,
    pub detected_at: f64,
}

impl fmt::Display for ContinuousLeakVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "continuous leak at {:.3} Hz (~{:.1} Gal/h), support {}/{} spectra",
            self.peak_frequency, self.estimated_flow.gal_per_hour, self.support, self.spectra_seen
        )
    }
}

/// Tests the histogram for a significant in-band peak, then clears it and
/// restarts the epoch at `now`.
///
/// No verdict is given when the histogram's overall maximum lies outside the
/// leak band.
pub fn analyze(
    histogram: &mut FrequencyHistogram,
    cfg: &SpectralConfig,
    significance: &SignificanceConfig,
    calibration: &FlowCalibration,
    now: f64,
) -> Option<ContinuousLeakVerdict> {
    let verdict = evaluate(histogram, cfg, significance, calibration, now);
    histogram.clear(now);
    verdict
}

fn evaluate(
    histogram: &FrequencyHistogram,
    cfg: &SpectralConfig,
    significance: &SignificanceConfig,
    calibration: &FlowCalibration,
    now: f64,
) -> Option<ContinuousLeakVerdict> {
    let grid = CountGrid::one_dim(&histogram.counts);
    let band = histogram.band_bins(cfg.leak_band);
    let (_, global_max) = grid.argmax(&Region::whole(&grid))?;
    if !band.contains(&global_max) {
        return None;
    }
    let peak = significant_peak(&grid, significance, Some(&Region::columns(band)))?;
    let peak_frequency = histogram.bin_center(peak.col);
    let estimated_flow = calibration.estimate(peak_frequency).ok()?;
    Some(ContinuousLeakVerdict {
        peak_frequency,
        estimated_flow,
        support: peak.pooled,
        spectra_seen: histogram.spectra_seen,
        detected_at: now,
    })
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (TAU * i as f64 / n as f64).cos()))
        .collect()
}

/// Mean-removed, Hann-weighted FFT magnitude of a window of samples.
pub struct SpectrumAnalyzer {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    frequencies: Vec<f64>,
    buffer: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl fmt::Debug for SpectrumAnalyzer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectrumAnalyzer")
            .field("len", &self.window.len())
            .finish()
    }
}

impl Clone for SpectrumAnalyzer {
    fn clone(&self) -> Self {
        Self {
            fft: Arc::clone(&self.fft),
            window: self.window.clone(),
            frequencies: self.frequencies.clone(),
            buffer: self.buffer.clone(),
            scratch: self.scratch.clone(),
        }
    }
}

impl SpectrumAnalyzer {
    pub fn new(len: usize, sampling_period: f64) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(len);
        let scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
        let span = len as f64 * sampling_period;
        Self {
            fft,
            window: hann(len),
            frequencies: (0..=len / 2).map(|k| k as f64 / span).collect(),
            buffer: vec![Complex::default(); len],
            scratch,
        }
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    pub fn analyze<I>(&mut self, values: I, window_end_time: f64) -> Spectrum
    where
        I: IntoIterator<Item = f64>,
        I::IntoIter: Clone,
    {
        let values = values.into_iter();
        let n = self.window.len();
        let mean = values.clone().sum::<f64>() / n as f64;
        let mut energy = 0.0;
        let mut count = 0;
        for ((slot, x), w) in self.buffer.iter_mut().zip(values).zip(&self.window) {
            let v = (x - mean) * w;
            energy += v * v;
            *slot = Complex::new(v, 0.0);
            count += 1;
        }
        assert_eq!(count, n, "window length mismatch");
        self.fft
            .process_with_scratch(&mut self.buffer, &mut self.scratch);
        Spectrum {
            frequencies: self.frequencies.clone(),
            magnitudes: self.buffer[..=n / 2].iter().map(|c| c.norm()).collect(),
            window_end_time,
            window_energy: energy,
        }
    }
}

/// Result of pushing one sample into the spectral path.
#[derive(Debug, Clone, Default)]
pub struct SpectralStep {
    pub spectrum: Option<Spectrum>,
    /// Sample that fell out of the moving window.
    pub evicted: Option<Sample>,
}

/// Moving window plus spectrum scheduling.
#[derive(Debug, Clone)]
pub struct SpectralDetector {
    cfg: SpectralConfig,
    window: VecDeque<Sample>,
    analyzer: SpectrumAnalyzer,
    last_spectrum: Option<f64>,
}

impl SpectralDetector {
    pub fn new(cfg: SpectralConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            analyzer: SpectrumAnalyzer::new(cfg.window_len, cfg.sampling_period),
            window: VecDeque::with_capacity(cfg.window_len),
            last_spectrum: None,
            cfg,
        })
    }

    pub fn config(&self) -> &SpectralConfig {
        &self.cfg
    }

    pub fn push(&mut self, sample: Sample) -> SpectralStep {
        let evicted = if self.window.len() == self.cfg.window_len {
            self.window.pop_front()
        } else {
            None
        };
        self.window.push_back(sample);
        let full = self.window.len() == self.cfg.window_len;
        let due = match self.last_spectrum {
            None => true,
            Some(last) => sample.timestamp - last >= self.cfg.spectra_interval - 1e-9,
        };
        let spectrum = (full && due).then(|| {
            self.last_spectrum = Some(sample.timestamp);
            self.analyzer
                .analyze(self.window.iter().map(|s| s.magnitude), sample.timestamp)
        });
        SpectralStep { spectrum, evicted }
    }

    /// Appends a sample; returns a spectrum when one is due.
    pub fn push_sample(&mut self, sample: Sample) -> Option<Spectrum> {
        self.push(sample).spectrum
    }

    /// Empties the window, oldest first. Spectrum scheduling restarts once
    /// the window refills.
    pub fn flush(&mut self) -> Vec<Sample> {
        self.last_spectrum = None;
        self.window.drain(..).collect()
    }

    pub fn window_fill(&self) -> usize {
        self.window.len()
    }
}
