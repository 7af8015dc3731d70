//! The full detection pipeline for one stream.
//!
//! ```text
//! raw sample → gap filling → baseline removal → moving window ─┬→ spectra → frequency histogram
//!                                                               └→ (evicted) pulse path → period–duration grid
//! ```
//!
//! Analyses run on logical time: the frequency histogram every
//! `spectral.analysis_interval` and the pulse grid every
//! `pulse.analysis_interval`, measured from the first sample.

use serde::Serialize;

use crate::config::Config;
use crate::error::Result;
use crate::ingest::{Baseline, GapFiller};
use crate::pulse::{DetectedPulse, PeriodicLeakVerdict, Pulse, PulseDetector, PulseHistogram};
use crate::sample::{Sample, StreamEvent};
use crate::spectral::{
    self, classify_peaks, ContinuousLeakVerdict, FrequencyHistogram, SpectralDetector,
    SpectralPeak, Spectrum,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Verdict {
    Continuous(ContinuousLeakVerdict),
    Periodic(PeriodicLeakVerdict),
}

impl Verdict {
    pub fn detected_at(&self) -> f64 {
        match self {
            Verdict::Continuous(v) => v.detected_at,
            Verdict::Periodic(v) => v.detected_at,
        }
    }

    pub fn support(&self) -> u32 {
        match self {
            Verdict::Continuous(v) => v.support,
            Verdict::Periodic(v) => v.support,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisKind {
    Continuous,
    Periodic,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DetectorEvent {
    Spectrum {
        spectrum: Spectrum,
        peaks: Vec<SpectralPeak>,
    },
    Pulse(Pulse),
    Analysis {
        kind: AnalysisKind,
        at: f64,
        verdict: Option<Verdict>,
    },
    StreamBreak {
        at: f64,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DetectorStats {
    pub samples_processed: u64,
    pub spectra_computed: u64,
    pub pulses_detected: u64,
    pub stream_breaks: u64,
    pub continuous_analyses: u64,
    pub periodic_analyses: u64,
}

#[derive(Debug, Clone, Copy)]
struct Schedule {
    next_spectral: f64,
    next_pulse: f64,
}

#[derive(Debug, Clone)]
pub struct LeakDetector {
    cfg: Config,
    gaps: GapFiller,
    baseline: Baseline,
    spectral: SpectralDetector,
    pulse: PulseDetector,
    frequency: FrequencyHistogram,
    cumulative_frequency: FrequencyHistogram,
    cumulative_pulse: PulseHistogram,
    schedule: Option<Schedule>,
    stats: DetectorStats,
    last_spectrum: Option<Spectrum>,
    scratch: Vec<StreamEvent>,
    pulse_scratch: Vec<DetectedPulse>,
}

impl LeakDetector {
    pub fn new(cfg: Config) -> Result<Self> {
        cfg.validate()?;
        let ts = cfg.sampling_period();
        Ok(Self {
            gaps: GapFiller::new(ts, cfg.max_gap),
            baseline: Baseline::new(cfg.baseline.window_len),
            spectral: SpectralDetector::new(cfg.spectral.clone())?,
            pulse: PulseDetector::new(cfg.pulse.clone(), ts, 0.0)?,
            frequency: FrequencyHistogram::for_config(&cfg.spectral, 0.0),
            cumulative_frequency: FrequencyHistogram::for_config(&cfg.spectral, 0.0),
            cumulative_pulse: PulseHistogram::new(
                cfg.pulse.duration_range,
                cfg.pulse.period_range,
                0.0,
            ),
            schedule: None,
            stats: DetectorStats::default(),
            last_spectrum: None,
            scratch: Vec::new(),
            pulse_scratch: Vec::new(),
            cfg,
        })
    }

    pub fn config(&self) -> &Config {
        &self.cfg
    }

    pub fn stats(&self) -> DetectorStats {
        self.stats
    }

    pub fn last_spectrum(&self) -> Option<&Spectrum> {
        self.last_spectrum.as_ref()
    }

    /// Frequency histogram accumulated since the first sample (never
    /// cleared by analyses).
    pub fn cumulative_frequency_histogram(&self) -> &FrequencyHistogram {
        &self.cumulative_frequency
    }

    /// Period–duration grid accumulated since the first sample.
    pub fn cumulative_pulse_histogram(&self) -> &PulseHistogram {
        &self.cumulative_pulse
    }

    /// Processes one raw sample, appending whatever it caused to `events`.
    pub fn push(&mut self, sample: Sample, events: &mut Vec<DetectorEvent>) {
        self.stats.samples_processed += 1;
        let mut stream = std::mem::take(&mut self.scratch);
        self.gaps.push(sample, &mut stream);
        for event in stream.drain(..) {
            match event {
                StreamEvent::Sample(s) => self.process(s, events),
                StreamEvent::Break => self.stream_break(sample.timestamp, events),
            }
        }
        self.scratch = stream;
        self.run_analyses(sample.timestamp, events);
    }

    /// Convenience wrapper collecting the events of one sample.
    pub fn push_collect(&mut self, sample: Sample) -> Vec<DetectorEvent> {
        let mut events = Vec::new();
        self.push(sample, &mut events);
        events
    }

    fn process(&mut self, sample: Sample, events: &mut Vec<DetectorEvent>) {
        let centered = self.baseline.apply(sample);
        let step = self.spectral.push(centered);
        if let Some(spectrum) = step.spectrum {
            let peaks = classify_peaks(&spectrum, &self.cfg.spectral);
            self.frequency.accumulate(&peaks);
            self.cumulative_frequency.accumulate(&peaks);
            self.stats.spectra_computed += 1;
            self.last_spectrum = Some(spectrum.clone());
            events.push(DetectorEvent::Spectrum { spectrum, peaks });
        }
        if let Some(old) = step.evicted {
            self.feed_pulse(old, events);
        }
    }

    fn feed_pulse(&mut self, sample: Sample, events: &mut Vec<DetectorEvent>) {
        let mut found = std::mem::take(&mut self.pulse_scratch);
        self.pulse.push(sample, &mut found);
        for d in found.drain(..) {
            self.stats.pulses_detected += 1;
            // mirror the epoch grid's increment into the cumulative one
            if let Some((row, col)) = d.cell {
                let cols = self.cumulative_pulse.cols();
                self.cumulative_pulse.counts[row * cols + col] += 1;
            }
            self.cumulative_pulse.pulses_seen += 1;
            events.push(DetectorEvent::Pulse(d.pulse));
        }
        self.pulse_scratch = found;
    }

    fn stream_break(&mut self, at: f64, events: &mut Vec<DetectorEvent>) {
        self.stats.stream_breaks += 1;
        for s in self.spectral.flush() {
            self.feed_pulse(s, events);
        }
        self.pulse.reset();
        self.baseline.reset();
        events.push(DetectorEvent::StreamBreak { at });
    }

    fn run_analyses(&mut self, now: f64, events: &mut Vec<DetectorEvent>) {
        let spectral_interval = self.cfg.spectral.analysis_interval;
        let pulse_interval = self.cfg.pulse.analysis_interval;
        let schedule = self.schedule.get_or_insert_with(|| {
            self.frequency.clear(now);
            self.pulse.histogram_mut().clear(now);
            Schedule {
                next_spectral: now + spectral_interval,
                next_pulse: now + pulse_interval,
            }
        });
        const EPS: f64 = 1e-9;
        if now >= schedule.next_spectral - EPS {
            while schedule.next_spectral <= now + EPS {
                schedule.next_spectral += spectral_interval;
            }
            let verdict = spectral::analyze(
                &mut self.frequency,
                &self.cfg.spectral,
                &self.cfg.frequency_significance,
                &self.cfg.flow_calibration,
                now,
            );
            self.stats.continuous_analyses += 1;
            events.push(DetectorEvent::Analysis {
                kind: AnalysisKind::Continuous,
                at: now,
                verdict: verdict.map(Verdict::Continuous),
            });
        }
        if now >= schedule.next_pulse - EPS {
            while schedule.next_pulse <= now + EPS {
                schedule.next_pulse += pulse_interval;
            }
            let verdict = self.pulse.analyze(&self.cfg.pulse_significance, now);
            self.stats.periodic_analyses += 1;
            events.push(DetectorEvent::Analysis {
                kind: AnalysisKind::Periodic,
                at: now,
                verdict: verdict.map(Verdict::Periodic),
            });
        }
    }
}
