//! Batch evaluation of simulated scenarios, used for seed sweeps.
//!
//! Each run is independent, so batches parallelize over runs. With the
//! `parallel` feature off, [`run_batch`] falls back to the sequential loop.

use std::time::{Duration, Instant};

use crate::alerting::{AlertEvent, AlertGate};
use crate::config::Config;
use crate::detector::{DetectorEvent, DetectorStats, LeakDetector, Verdict};
use crate::error::Result;
use crate::sim::{generate, SimScenario};

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub scenario: SimScenario,
    pub verdicts: Vec<Verdict>,
    pub alerts: Vec<AlertEvent>,
    pub stats: DetectorStats,
    /// Largest relative Parseval mismatch over all spectra.
    pub max_parseval_error: f64,
    pub elapsed: Duration,
}

impl RunOutcome {
    pub fn first_continuous(&self) -> Option<f64> {
        self.verdicts.iter().find_map(|v| match v {
            Verdict::Continuous(c) => Some(c.detected_at),
            _ => None,
        })
    }

    pub fn first_periodic(&self) -> Option<f64> {
        self.verdicts.iter().find_map(|v| match v {
            Verdict::Periodic(p) => Some(p.detected_at),
            _ => None,
        })
    }
}

/// Simulates `scenario` and runs it through a fresh detector.
pub fn run_one(scenario: &SimScenario, cfg: &Config) -> Result<RunOutcome> {
    let started = Instant::now();
    let mut detector = LeakDetector::new(cfg.clone())?;
    let mut gate = AlertGate::new(cfg.alert_policy.clone());
    let mut events = Vec::new();
    let mut verdicts = Vec::new();
    let mut alerts = Vec::new();
    let mut max_parseval_error = 0.0f64;
    for sample in generate(scenario, cfg.sampling_period())? {
        detector.push(sample, &mut events);
        for event in events.drain(..) {
            match event {
                DetectorEvent::Spectrum { spectrum, .. } => {
                    max_parseval_error = max_parseval_error.max(spectrum.parseval_error());
                }
                DetectorEvent::Analysis {
                    verdict: Some(v), ..
                } => {
                    alerts.extend(gate.submit(&v));
                    verdicts.push(v);
                }
                _ => {}
            }
        }
    }
    Ok(RunOutcome {
        scenario: scenario.clone(),
        verdicts,
        alerts,
        stats: detector.stats(),
        max_parseval_error,
        elapsed: started.elapsed(),
    })
}

pub fn run_batch_sequential(scenarios: &[SimScenario], cfg: &Config) -> Vec<Result<RunOutcome>> {
    scenarios.iter().map(|s| run_one(s, cfg)).collect()
}

#[cfg(feature = "parallel")]
pub fn run_batch_parallel(scenarios: &[SimScenario], cfg: &Config) -> Vec<Result<RunOutcome>> {
    use rayon::prelude::*;
    scenarios.par_iter().map(|s| run_one(s, cfg)).collect()
}

/// Runs every scenario, in parallel when the `parallel` feature is on.
/// Output order matches input order either way.
pub fn run_batch(scenarios: &[SimScenario], cfg: &Config) -> Vec<Result<RunOutcome>> {
    #[cfg(feature = "parallel")]
    {
        run_batch_parallel(scenarios, cfg)
    }
    #[cfg(not(feature = "parallel"))]
    {
        run_batch_sequential(scenarios, cfg)
    }
}

/// `base` repeated over seeds `0..count` offset by `first_seed`.
pub fn seed_sweep(base: &SimScenario, first_seed: u64, count: u64) -> Vec<SimScenario> {
    (first_seed..first_seed + count)
        .map(|rng_seed| SimScenario {
            rng_seed,
            ..base.clone()
        })
        .collect()
}
