//! Periodic-leak path.
//!
//! Samples leaving the spectral window go through a front end that raises
//! per-sample flags, are debounced into pulses ([`assemble`]) and binned by
//! duration and start-to-start period ([`histogram`]). A significant cell in
//! the period–duration grid means a periodic leak.
//!
//! Two front ends exist. The default ([`subband`]) flags each narrow band of
//! the leak range on its own power ratio, unions overlapping band pulses and
//! pairs a pulse only with the previous pulse on a nearby carrier. The other
//! runs the trailing z-score ([`zscore`]) over the whole-band energy envelope
//! ([`envelope`]).

pub mod assemble;
pub mod envelope;
pub mod histogram;
pub mod subband;
pub mod zscore;

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use assemble::{assemble_pulses, Pulse, PulseAssembler};
pub use envelope::{EnvelopeConfig, EnvelopeFrontEnd, EnvelopePoint};
pub use histogram::{LogBins, PulseHistogram};
pub use subband::{SubbandConfig, SubbandFrontEnd};
pub use zscore::ZScoreState;

use crate::error::{Error, Result};
use crate::histostats::{significant_peak, CountGrid, SignificanceConfig};
use crate::sample::Sample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PulseConfig {
    /// z-score trailing window, seconds.
    pub lag: f64,
    pub threshold: f64,
    pub influence: f64,
    /// Consecutive flags needed to open or close a pulse, samples.
    pub debounce: usize,
    pub duration_range: [f64; 2],
    pub period_range: [f64; 2],
    pub analysis_interval: f64,
    pub front_end: FrontEndKind,
    /// Consumption blanking, and the whole front end in `zscore` mode.
    pub envelope: EnvelopeConfig,
    /// Filter banks of the `subband` front end; their pulses are unioned.
    pub subbands: Vec<SubbandConfig>,
    /// Two pulses pair into a period only if their carriers are within this
    /// distance, Hz.
    pub pairing_tolerance_hz: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrontEndKind {
    /// Per-band power ratios with a hold/onset rule.
    #[default]
    Subband,
    /// Full leak-band envelope judged by the trailing z-score.
    Zscore,
}

impl Default for PulseConfig {
    fn default() -> Self {
        Self {
            lag: 10.0,
            threshold: 3.0,
            influence: 0.0,
            debounce: 4,
            duration_range: [5.0, 200.0],
            period_range: [10.0, 2000.0],
            analysis_interval: 21600.0,
            front_end: FrontEndKind::default(),
            envelope: EnvelopeConfig::default(),
            subbands: vec![SubbandConfig::default()],
            pairing_tolerance_hz: 0.025,
        }
    }
}

impl PulseConfig {
    pub fn lag_samples(&self, sampling_period: f64) -> usize {
        (self.lag / sampling_period).round() as usize
    }

    pub fn validate(&self, sampling_period: f64) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(format!("pulse: {msg}")));
        if self.lag_samples(sampling_period) == 0 {
            return fail(format!(
                "lag must cover at least one sample, got {} s",
                self.lag
            ));
        }
        if !(self.threshold > 0.0) {
            return fail("threshold must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.influence) {
            return fail("influence must lie in [0, 1]".into());
        }
        if self.debounce == 0 {
            return fail("debounce must be at least 1".into());
        }
        let [dlo, dhi] = self.duration_range;
        let [plo, phi] = self.period_range;
        if !(dlo > 0.0 && dhi > dlo && plo > 0.0 && phi > plo) {
            return fail(
                "duration_range and period_range must be increasing positive intervals".into(),
            );
        }
        if !(dhi < phi) {
            return fail("longest duration must be shorter than the longest period".into());
        }
        if !(self.analysis_interval > 0.0) {
            return fail("analysis_interval must be positive".into());
        }
        if self.front_end == FrontEndKind::Subband && self.subbands.is_empty() {
            return fail("the subband front end needs at least one bank".into());
        }
        if !(self.pairing_tolerance_hz >= 0.0) {
            return fail("pairing_tolerance_hz must be non-negative".into());
        }
        for bank in &self.subbands {
            bank.validate(sampling_period)?;
        }
        self.envelope.validate(sampling_period)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicLeakVerdict {
    pub modal_period: f64,
    pub modal_duration: f64,
    pub support: u32,
    pub duty_cycle: f64,
    pub pulses_seen: u64,
    pub detected_at: f64,
}

impl fmt::Display for PeriodicLeakVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "periodic leak: ~{:.0} s pulses every ~{:.0} s, support {}/{} pulses",
            self.modal_duration, self.modal_period, self.support, self.pulses_seen
        )
    }
}

/// Tests the period–duration grid for a significant cell, then clears it and
/// restarts the epoch at `now`.
pub fn analyze(
    histogram: &mut PulseHistogram,
    significance: &SignificanceConfig,
    now: f64,
) -> Option<PeriodicLeakVerdict> {
    let grid = CountGrid::new(&histogram.counts, histogram.rows(), histogram.cols());
    let verdict = significant_peak(&grid, significance, None).map(|peak| {
        let modal_duration = histogram.duration_bins.center(peak.row);
        let modal_period = histogram.period_bins.center(peak.col);
        PeriodicLeakVerdict {
            modal_period,
            modal_duration,
            support: peak.pooled,
            duty_cycle: modal_duration / modal_period,
            pulses_seen: histogram.pulses_seen,
            detected_at: now,
        }
    });
    histogram.clear(now);
    verdict
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectedPulse {
    pub pulse: Pulse,
    /// Grid cell (duration bin, period bin) this pulse incremented, if its
    /// pair was in range.
    pub cell: Option<(usize, usize)>,
}

#[derive(Debug, Clone)]
enum Front {
    Zscore {
        front: Box<EnvelopeFrontEnd>,
        zscore: ZScoreState,
        assembler: PulseAssembler,
    },
    Subband {
        banks: Vec<Bank>,
        // candidates not yet final, sorted by start, pairwise disjoint
        clusters: Vec<Pulse>,
    },
}

/// Front end → assembler → histogram, for one stream.
#[derive(Debug, Clone)]
pub struct PulseDetector {
    cfg: PulseConfig,
    front: Front,
    histogram: PulseHistogram,
    // (start, carrier) of recent pulses, oldest first
    recent: VecDeque<(f64, Option<f64>)>,
    ready: Vec<Pulse>,
}

impl PulseDetector {
    pub fn new(cfg: PulseConfig, sampling_period: f64, epoch_start: f64) -> Result<Self> {
        cfg.validate(sampling_period)?;
        let front = match cfg.front_end {
            FrontEndKind::Zscore => Front::Zscore {
                front: Box::new(EnvelopeFrontEnd::new(&cfg.envelope, sampling_period)?),
                zscore: ZScoreState::new(
                    cfg.lag_samples(sampling_period),
                    cfg.threshold,
                    cfg.influence,
                ),
                assembler: PulseAssembler::new(cfg.debounce, cfg.duration_range),
            },
            FrontEndKind::Subband => Front::Subband {
                banks: cfg
                    .subbands
                    .iter()
                    .map(|b| Bank::new(b, &cfg, sampling_period))
                    .collect::<Result<_>>()?,
                clusters: Vec::new(),
            },
        };
        Ok(Self {
            histogram: PulseHistogram::new(cfg.duration_range, cfg.period_range, epoch_start),
            front,
            recent: VecDeque::new(),
            ready: Vec::new(),
            cfg,
        })
    }

    pub fn config(&self) -> &PulseConfig {
        &self.cfg
    }

    pub fn histogram(&self) -> &PulseHistogram {
        &self.histogram
    }

    pub fn histogram_mut(&mut self) -> &mut PulseHistogram {
        &mut self.histogram
    }

    /// Feeds one sample, appending every pulse it completes to `out`.
    pub fn push(&mut self, sample: Sample, out: &mut Vec<DetectedPulse>) {
        let duration_range = self.cfg.duration_range;
        let ready = &mut self.ready;
        match &mut self.front {
            Front::Zscore {
                front,
                zscore,
                assembler,
            } => {
                if let Some(point) = front.push(sample) {
                    if !point.blanked {
                        let flagged = zscore.step(point.value);
                        ready.extend(assembler.push(point.timestamp, flagged, zscore.last_z()));
                    }
                }
            }
            Front::Subband { banks, clusters } => {
                for bank in banks.iter_mut() {
                    bank.push(sample, clusters);
                }
                // a cluster is final once no band can still extend it
                let horizon = banks
                    .iter()
                    .flat_map(|b| {
                        b.assemblers
                            .iter()
                            .filter_map(PulseAssembler::pending_start)
                    })
                    .min_by(f64::total_cmp);
                while clusters
                    .first()
                    .is_some_and(|c| horizon.is_none_or(|h| c.end < h))
                {
                    let c = clusters.remove(0);
                    if c.duration >= duration_range[0] && c.duration <= duration_range[1] {
                        ready.push(c);
                    }
                }
            }
        }
        for pulse in self.ready.drain(..) {
            let cell = self
                .histogram
                .accumulate(&pulse, pair_start(&self.recent, &pulse, &self.cfg));
            let horizon = pulse.start - self.cfg.period_range[1];
            while self.recent.front().is_some_and(|&(s, _)| s < horizon) {
                self.recent.pop_front();
            }
            self.recent.push_back((pulse.start, pulse.carrier_hz));
            out.push(DetectedPulse { pulse, cell });
        }
    }

    /// Convenience wrapper collecting the pulses of one sample.
    pub fn push_collect(&mut self, sample: Sample) -> Vec<DetectedPulse> {
        let mut out = Vec::new();
        self.push(sample, &mut out);
        out
    }

    /// Drops all in-flight state after a stream break. The histogram keeps
    /// its counts.
    pub fn reset(&mut self) {
        match &mut self.front {
            Front::Zscore {
                front,
                zscore,
                assembler,
            } => {
                front.reset();
                zscore.reset();
                assembler.reset();
            }
            Front::Subband { banks, clusters } => {
                banks.iter_mut().for_each(Bank::reset);
                clusters.clear();
            }
        }
        self.recent.clear();
    }

    pub fn analyze(
        &mut self,
        significance: &SignificanceConfig,
        now: f64,
    ) -> Option<PeriodicLeakVerdict> {
        analyze(&mut self.histogram, significance, now)
    }
}

/// One filter bank of the sub-band front end with its per-band assemblers.
#[derive(Debug, Clone)]
struct Bank {
    front: SubbandFrontEnd,
    assemblers: Vec<PulseAssembler>,
    // (time, ratio) since each band's pending pulse began
    traces: Vec<Vec<(f64, f64)>>,
    centers: Vec<f64>,
    hold: f64,
    onset: f64,
    extent: f64,
}

impl Bank {
    fn new(sub: &SubbandConfig, cfg: &PulseConfig, sampling_period: f64) -> Result<Self> {
        Ok(Self {
            front: SubbandFrontEnd::new(sub, &cfg.envelope, sampling_period)?,
            assemblers: (0..sub.bands)
                .map(|_| PulseAssembler::new(cfg.debounce, [0.0, f64::INFINITY]))
                .collect(),
            traces: vec![Vec::new(); sub.bands],
            centers: sub.centers(),
            hold: sub.hold_ratio,
            onset: sub.onset_ratio,
            extent: sub.extent_fraction,
        })
    }

    fn push(&mut self, sample: Sample, clusters: &mut Vec<Pulse>) {
        let Self {
            front,
            assemblers,
            traces,
            centers,
            hold,
            onset,
            extent,
        } = self;
        front.push(sample, |ts, blanked, ratios| {
            if blanked {
                return;
            }
            for (k, asm) in assemblers.iter_mut().enumerate() {
                let r = ratios[k];
                let trace = &mut traces[k];
                if let Some(p) = asm.push(ts, r >= *hold, r) {
                    if p.peak >= *onset {
                        let mut p = peak_relative_extent(trace, *extent).unwrap_or(p);
                        p.carrier_hz = Some(centers[k]);
                        insert_merged(clusters, p);
                    }
                }
                if asm.pending_start().is_some() {
                    trace.push((ts, r));
                } else {
                    trace.clear();
                }
            }
        });
    }

    fn reset(&mut self) {
        self.front.reset();
        self.assemblers.iter_mut().for_each(PulseAssembler::reset);
        self.traces.iter_mut().for_each(Vec::clear);
    }
}

/// Start of the most recent pulse on a compatible carrier.
fn pair_start(
    recent: &VecDeque<(f64, Option<f64>)>,
    pulse: &Pulse,
    cfg: &PulseConfig,
) -> Option<f64> {
    let tol = cfg.pairing_tolerance_hz;
    recent
        .iter()
        .rev()
        .find(|(_, c)| match (c, pulse.carrier_hz) {
            (None, None) => true,
            (Some(a), Some(b)) => (a - b).abs() <= tol + 1e-12,
            _ => false,
        })
        .map(|&(s, _)| s)
}

/// Span over which a band's power ratio stays at or above `fraction` of its
/// peak excess over the floor (ratio 1). Unlike the hold threshold this does
/// not grow with pulse strength.
fn peak_relative_extent(trace: &[(f64, f64)], fraction: f64) -> Option<Pulse> {
    let peak = trace.iter().map(|&(_, r)| r).max_by(f64::total_cmp)?;
    let level = 1.0 + (peak - 1.0) * fraction;
    let first = trace.iter().position(|&(_, r)| r >= level)?;
    let last = trace.iter().rposition(|&(_, r)| r >= level)?;
    let (start, end) = (trace[first].0, trace[last].0);
    Some(Pulse {
        start,
        end,
        duration: end - start,
        peak,
        carrier_hz: None,
    })
}

/// Inserts `p`, then unions every run of overlapping clusters. The union
/// keeps the carrier of its strongest member.
fn insert_merged(clusters: &mut Vec<Pulse>, p: Pulse) {
    let at = clusters.partition_point(|c| c.start <= p.start);
    clusters.insert(at, p);
    let mut i = 0;
    while i + 1 < clusters.len() {
        if clusters[i + 1].start <= clusters[i].end {
            let next = clusters.remove(i + 1);
            let c = &mut clusters[i];
            c.end = c.end.max(next.end);
            c.duration = c.end - c.start;
            if next.peak > c.peak {
                c.peak = next.peak;
                c.carrier_hz = next.carrier_hz;
            }
        } else {
            i += 1;
        }
    }
}
