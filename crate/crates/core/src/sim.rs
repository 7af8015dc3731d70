//! Synthetic magnetometer signals.
//!
//! The magnitude is modelled as a zero-baseline scalar built from additive
//! components:
//!
//! - a continuous leak: `leak_amplitude * sin(2π f t)`;
//! - a periodic leak: a carrier gated on for `pulse_duration` at the start of
//!   every `pulse_period`;
//! - consumption bursts: Poisson arrivals of loud rectangular envelopes
//!   (30–300 s, 5–10 × `leak_amplitude`) filled with a 0.5–1.0 Hz carrier;
//! - white Gaussian noise.

use std::f64::consts::TAU;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::Sample;

pub const CSV_HEADER: &str = "timestamp_s,magnitude";

pub const BURST_DURATION_S: (f64, f64) = (30.0, 300.0);
pub const BURST_AMPLITUDE_FACTOR: (f64, f64) = (5.0, 10.0);
pub const BURST_CARRIER_HZ: (f64, f64) = (0.5, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    #[serde(alias = "none")]
    NoLeak,
    Continuous,
    Periodic,
    Mixed,
}

impl ScenarioKind {
    fn has_continuous(self) -> bool {
        matches!(self, ScenarioKind::Continuous | ScenarioKind::Mixed)
    }

    fn has_periodic(self) -> bool {
        matches!(self, ScenarioKind::Periodic | ScenarioKind::Mixed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimScenario {
    pub kind: ScenarioKind,
    /// Hz, continuous and mixed scenarios.
    pub leak_frequency: f64,
    /// Seconds between pulse onsets.
    pub pulse_period: f64,
    /// Seconds the carrier stays on per pulse.
    pub pulse_duration: f64,
    /// Hz, fill frequency inside periodic pulses.
    pub carrier_frequency: f64,
    pub leak_amplitude: f64,
    pub noise_sigma: f64,
    pub consumption_events_per_hour: f64,
    /// Seconds of simulated time.
    pub duration: f64,
    pub rng_seed: u64,
}

impl Default for SimScenario {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::NoLeak,
            leak_frequency: 0.05,
            pulse_period: 600.0,
            pulse_duration: 60.0,
            carrier_frequency: 0.3,
            leak_amplitude: 1.0,
            noise_sigma: 1.0,
            consumption_events_per_hour: 0.0,
            duration: 3600.0,
            rng_seed: 0,
        }
    }
}

impl SimScenario {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidScenario(msg));
        if !self.duration.is_finite() || self.duration < 0.0 {
            return fail(format!(
                "duration must be non-negative, got {}",
                self.duration
            ));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return fail(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            ));
        }
        if !(self.leak_amplitude >= 0.0) || !self.leak_amplitude.is_finite() {
            return fail(format!(
                "leak_amplitude must be >= 0, got {}",
                self.leak_amplitude
            ));
        }
        if !(self.consumption_events_per_hour >= 0.0)
            || !self.consumption_events_per_hour.is_finite()
        {
            return fail(format!(
                "consumption_events_per_hour must be >= 0, got {}",
                self.consumption_events_per_hour
            ));
        }
        if self.kind.has_continuous() && !(0.001..=1.0).contains(&self.leak_frequency) {
            return fail(format!(
                "leak_frequency must lie in [0.001, 1.0] Hz, got {}",
                self.leak_frequency
            ));
        }
        if self.kind.has_periodic() {
            if !(self.pulse_duration > 0.0) {
                return fail(format!(
                    "pulse_duration must be positive, got {}",
                    self.pulse_duration
                ));
            }
            if !(self.pulse_duration < self.pulse_period) || !self.pulse_period.is_finite() {
                return fail(format!(
                    "pulse_duration ({}) must be shorter than pulse_period ({})",
                    self.pulse_duration, self.pulse_period
                ));
            }
            if !(self.carrier_frequency > 0.0) || !self.carrier_frequency.is_finite() {
                return fail(format!(
                    "carrier_frequency must be positive, got {}",
                    self.carrier_frequency
                ));
            }
        }
        Ok(())
    }

    /// Number of samples [`generate`] emits at the given sampling period.
    pub fn sample_count(&self, sampling_period: f64) -> u64 {
        (self.duration / sampling_period + 1e-9).floor() as u64
    }

    /// Is `t` inside a periodic-leak pulse?
    pub fn pulse_active(&self, t: f64) -> bool {
        self.kind.has_periodic() && t.rem_euclid(self.pulse_period) < self.pulse_duration
    }
}

#[derive(Debug, Clone, Copy)]
struct Burst {
    start: f64,
    end: f64,
    amplitude: f64,
    frequency: f64,
    phase: f64,
}

impl Burst {
    fn value(&self, t: f64) -> f64 {
        self.amplitude * (TAU * self.frequency * (t - self.start) + self.phase).sin()
    }
}

/// Poisson-scheduled consumption bursts, produced lazily in time order.
#[derive(Debug, Clone)]
struct BurstSchedule {
    rng: ChaCha8Rng,
    interarrival: Option<Exp<f64>>,
    next_arrival: f64,
    active: Vec<Burst>,
    reference_amplitude: f64,
}

impl BurstSchedule {
    fn new(seed: u64, events_per_hour: f64, reference_amplitude: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let interarrival = (events_per_hour > 0.0)
            .then(|| Exp::new(events_per_hour / 3600.0).expect("positive rate"));
        let mut schedule = Self {
            rng,
            interarrival,
            next_arrival: f64::INFINITY,
            active: Vec::new(),
            reference_amplitude,
        };
        if let Some(exp) = schedule.interarrival {
            schedule.next_arrival = exp.sample(&mut schedule.rng);
        }
        schedule
    }

    fn value(&mut self, t: f64) -> f64 {
        while self.next_arrival <= t {
            let start = self.next_arrival;
            let duration = self
                .rng
                .random_range(BURST_DURATION_S.0..=BURST_DURATION_S.1);
            let factor = self
                .rng
                .random_range(BURST_AMPLITUDE_FACTOR.0..=BURST_AMPLITUDE_FACTOR.1);
            let frequency = self
                .rng
                .random_range(BURST_CARRIER_HZ.0..=BURST_CARRIER_HZ.1);
            let phase = self.rng.random_range(0.0..TAU);
            self.active.push(Burst {
                start,
                end: start + duration,
                amplitude: factor * self.reference_amplitude,
                frequency,
                phase,
            });
            let exp = self
                .interarrival
                .expect("arrivals scheduled only with a rate");
            self.next_arrival = start + exp.sample(&mut self.rng);
        }
        self.active.retain(|b| b.end > t);
        self.active.iter().map(|b| b.value(t)).sum()
    }
}

/// Iterator over the samples of one scenario.
#[derive(Debug, Clone)]
pub struct SampleStream {
    scenario: SimScenario,
    sampling_period: f64,
    index: u64,
    total: u64,
    noise_rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
    bursts: BurstSchedule,
}

impl SampleStream {
    fn deterministic_value(&self, t: f64) -> f64 {
        let s = &self.scenario;
        let mut value = 0.0;
        if s.kind.has_continuous() {
            value += s.leak_amplitude * (TAU * s.leak_frequency * t).sin();
        }
        if s.pulse_active(t) {
            let onset = t - t.rem_euclid(s.pulse_period);
            value += s.leak_amplitude * (TAU * s.carrier_frequency * (t - onset)).cos();
        }
        value
    }
}

impl Iterator for SampleStream {
    type Item = Sample;

    fn next(&mut self) -> Option<Sample> {
        if self.index >= self.total {
            return None;
        }
        let t = self.index as f64 * self.sampling_period;
        self.index += 1;
        let mut value = self.deterministic_value(t) + self.bursts.value(t);
        if let Some(noise) = &self.noise {
            value += noise.sample(&mut self.noise_rng);
        }
        Some(Sample::new(t, value))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = (self.total - self.index) as usize;
        (left, Some(left))
    }
}

impl ExactSizeIterator for SampleStream {}

/// Streams `scenario` sampled every `sampling_period` seconds.
///
/// The same scenario (including its seed) always yields a bit-identical
/// stream.
pub fn generate(scenario: &SimScenario, sampling_period: f64) -> Result<SampleStream> {
    scenario.validate()?;
    if !(sampling_period > 0.0) || !sampling_period.is_finite() {
        return Err(Error::InvalidScenario(format!(
            "sampling period must be positive, got {sampling_period}"
        )));
    }
    let mut noise_rng = ChaCha8Rng::seed_from_u64(scenario.rng_seed);
    noise_rng.set_stream(0);
    let noise = (scenario.noise_sigma > 0.0)
        .then(|| Normal::new(0.0, scenario.noise_sigma).expect("finite sigma"));
    Ok(SampleStream {
        total: scenario.sample_count(sampling_period),
        scenario: scenario.clone(),
        sampling_period,
        index: 0,
        noise_rng,
        noise,
        bursts: BurstSchedule::new(
            scenario.rng_seed,
            scenario.consumption_events_per_hour,
            scenario.leak_amplitude,
        ),
    })
}

/// Formats one CSV data row. Timestamps use three decimals; magnitudes use
/// the shortest representation that parses back to the same `f64`.
pub fn format_row(sample: &Sample) -> String {
    format!("{:.3},{}", sample.timestamp, sample.magnitude)
}

/// Writes samples as `timestamp_s,magnitude` CSV and returns the row count.
pub fn write_csv<I>(samples: I, path: impl AsRef<Path>) -> Result<u64>
where
    I: IntoIterator<Item = Sample>,
{
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut rows = 0u64;
    let io = |e| Error::io(path, e);
    writeln!(out, "{CSV_HEADER}").map_err(io)?;
    for sample in samples {
        writeln!(out, "{}", format_row(&sample)).map_err(io)?;
        rows += 1;
    }
    out.flush().map_err(io)?;
    Ok(rows)
}
