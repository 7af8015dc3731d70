//! File replay: the whole pipeline over one CSV at full speed, then a JSON
//! report and plot-data CSVs.
//!
//! Output is a pure function of the input file and the configuration, so two
//! runs produce byte-identical files. Floats are printed in their shortest
//! round-trip form.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::alerting::{AlertGate, AlertJson};
use crate::config::Config;
use crate::detector::{DetectorEvent, LeakDetector, Verdict};
use crate::error::{Error, Result};
use crate::ingest::read_csv;
use crate::pulse::{Pulse, PulseHistogram};
use crate::sample::Sample;
use crate::sim::{format_row, CSV_HEADER};
use crate::spectral::{FrequencyHistogram, Spectrum};

pub const RAW_EXCERPT_FILE: &str = "raw_excerpt.csv";
pub const LAST_SPECTRUM_FILE: &str = "last_spectrum.csv";
pub const FREQUENCY_HISTOGRAM_FILE: &str = "frequency_histogram.csv";
pub const PULSE_GRID_FILE: &str = "pulse_grid.csv";
pub const PULSES_FILE: &str = "pulses.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct DetectOptions {
    pub input: PathBuf,
    pub report: PathBuf,
    pub plots_dir: Option<PathBuf>,
    pub config: Config,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrequencyHistogramReport {
    pub bin_width_hz: f64,
    pub spectra_seen: u64,
    pub counts: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PulseGridReport {
    pub duration_edges_s: Vec<f64>,
    pub period_edges_s: Vec<f64>,
    pub pulses_seen: u64,
    /// `counts[duration_bin][period_bin]`.
    pub counts: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectReport {
    pub input: String,
    pub leak_found: bool,
    pub samples_processed: u64,
    pub spectra_computed: u64,
    pub pulses_detected: u64,
    pub stream_breaks: u64,
    pub first_timestamp_s: Option<f64>,
    pub last_timestamp_s: Option<f64>,
    pub verdicts: Vec<Verdict>,
    pub alerts: Vec<AlertJson>,
    /// Accumulated over the whole file, not reset by analyses.
    pub frequency_histogram: FrequencyHistogramReport,
    pub pulse_grid: PulseGridReport,
    pub config: Config,
}

struct Collected {
    report: DetectReport,
    raw: VecDeque<Sample>,
    last_spectrum: Option<Spectrum>,
    pulses: Vec<Pulse>,
    frequency: FrequencyHistogram,
    grid: PulseHistogram,
}

/// Runs the pipeline over `opts.input`, writes the report and, if asked, the
/// plot files. On any failure no plot file is left behind.
pub fn cmd_detect(opts: &DetectOptions) -> Result<DetectReport> {
    let collected = run_pipeline(opts)?;
    if let Some(dir) = &opts.plots_dir {
        write_plots(dir, &collected)?;
    }
    let json = serde_json::to_string_pretty(&collected.report)? + "\n";
    if let Err(e) = write_atomic(&opts.report, &json) {
        if let Some(dir) = &opts.plots_dir {
            remove_plots(dir);
        }
        return Err(e);
    }
    Ok(collected.report)
}

fn run_pipeline(opts: &DetectOptions) -> Result<Collected> {
    let cfg = &opts.config;
    let mut detector = LeakDetector::new(cfg.clone())?;
    let mut gate = AlertGate::new(cfg.alert_policy.clone());
    let excerpt_len = cfg.spectral.window_len;
    let mut raw = VecDeque::with_capacity(excerpt_len + 1);
    let mut events = Vec::new();
    let mut verdicts = Vec::new();
    let mut alerts = Vec::new();
    let mut pulses = Vec::new();
    let (mut first, mut last) = (None, None);
    for sample in read_csv(&opts.input)? {
        let sample = sample?;
        first.get_or_insert(sample.timestamp);
        last = Some(sample.timestamp);
        if raw.len() == excerpt_len {
            raw.pop_front();
        }
        raw.push_back(sample);
        detector.push(sample, &mut events);
        for event in events.drain(..) {
            match event {
                DetectorEvent::Pulse(p) => pulses.push(p),
                DetectorEvent::Analysis {
                    verdict: Some(v), ..
                } => {
                    if let Some(a) = gate.submit(&v) {
                        alerts.push(a.to_wire());
                    }
                    verdicts.push(v);
                }
                _ => {}
            }
        }
    }
    let stats = detector.stats();
    let frequency = detector.cumulative_frequency_histogram().clone();
    let grid = detector.cumulative_pulse_histogram().clone();
    let report = DetectReport {
        input: opts.input.display().to_string(),
        leak_found: !verdicts.is_empty(),
        samples_processed: stats.samples_processed,
        spectra_computed: stats.spectra_computed,
        pulses_detected: stats.pulses_detected,
        stream_breaks: stats.stream_breaks,
        first_timestamp_s: first,
        last_timestamp_s: last,
        verdicts,
        alerts,
        frequency_histogram: FrequencyHistogramReport {
            bin_width_hz: frequency.bin_width,
            spectra_seen: frequency.spectra_seen,
            counts: frequency.counts.clone(),
        },
        pulse_grid: PulseGridReport {
            duration_edges_s: (0..=grid.rows())
                .map(|i| grid.duration_bins.edge(i))
                .collect(),
            period_edges_s: (0..=grid.cols())
                .map(|i| grid.period_bins.edge(i))
                .collect(),
            pulses_seen: grid.pulses_seen,
            counts: grid
                .counts
                .chunks(grid.cols())
                .map(<[u32]>::to_vec)
                .collect(),
        },
        config: cfg.clone(),
    };
    Ok(Collected {
        report,
        raw,
        last_spectrum: detector.last_spectrum().cloned(),
        pulses,
        frequency,
        grid,
    })
}

fn plot_files(c: &Collected) -> Vec<(&'static str, String)> {
    let mut raw = format!("{CSV_HEADER}\n");
    for s in &c.raw {
        let _ = writeln!(raw, "{}", format_row(s));
    }

    let mut spectrum = String::from("frequency_hz,magnitude\n");
    if let Some(sp) = &c.last_spectrum {
        for (f, m) in sp.frequencies.iter().zip(&sp.magnitudes) {
            let _ = writeln!(spectrum, "{f},{m}");
        }
    }

    let mut freq = String::from("bin_start_hz,bin_end_hz,count\n");
    for (i, n) in c.frequency.counts.iter().enumerate() {
        let w = c.frequency.bin_width;
        let _ = writeln!(freq, "{},{},{n}", i as f64 * w, (i + 1) as f64 * w);
    }

    let mut grid = String::from("duration_lo_s,duration_hi_s,period_lo_s,period_hi_s,count\n");
    let (db, pb) = (c.grid.duration_bins, c.grid.period_bins);
    for r in 0..c.grid.rows() {
        for col in 0..c.grid.cols() {
            let _ = writeln!(
                grid,
                "{},{},{},{},{}",
                db.edge(r),
                db.edge(r + 1),
                pb.edge(col),
                pb.edge(col + 1),
                c.grid.get(r, col)
            );
        }
    }

    let mut pulses = String::from("start_s,end_s,duration_s,peak,carrier_hz\n");
    for p in &c.pulses {
        let carrier = p.carrier_hz.map(|f| f.to_string()).unwrap_or_default();
        let _ = writeln!(
            pulses,
            "{},{},{},{},{carrier}",
            p.start, p.end, p.duration, p.peak
        );
    }

    vec![
        (RAW_EXCERPT_FILE, raw),
        (LAST_SPECTRUM_FILE, spectrum),
        (FREQUENCY_HISTOGRAM_FILE, freq),
        (PULSE_GRID_FILE, grid),
        (PULSES_FILE, pulses),
    ]
}

fn write_plots(dir: &Path, c: &Collected) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, text) in plot_files(c) {
        if let Err(e) = write_atomic(&dir.join(name), &text) {
            remove_plots(dir);
            return Err(e);
        }
    }
    Ok(())
}

fn remove_plots(dir: &Path) {
    for name in [
        RAW_EXCERPT_FILE,
        LAST_SPECTRUM_FILE,
        FREQUENCY_HISTOGRAM_FILE,
        PULSE_GRID_FILE,
        PULSES_FILE,
    ] {
        let _ = fs::remove_file(dir.join(name));
    }
}

/// Writes via a sibling temp file and a rename, so readers never see half a
/// file.
fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    if let Err(e) = fs::write(&tmp, text) {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(&tmp, e));
    }
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}
