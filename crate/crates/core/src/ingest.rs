//! Sample sources and stream normalization.
//!
//! CSV replay and line-delimited live input share [`RecordParser`]; the
//! resulting samples pass through [`GapFiller`] (zero-order hold for short
//! gaps, stream breaks for outages) and [`Baseline`] (running-median DC
//! removal) before reaching the detectors.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufRead, BufReader, Lines};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::{Sample, StreamEvent};
use crate::sim::CSV_HEADER;

/// Parses `timestamp_s,magnitude` records and enforces monotone time.
#[derive(Debug, Clone, Default)]
pub struct RecordParser {
    previous: Option<f64>,
}

impl RecordParser {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses one record. `line` is the 1-based line number used in errors.
    pub fn parse(&mut self, text: &str, line: u64) -> Result<Sample> {
        let sample = parse_record(text, line)?;
        if let Some(previous) = self.previous {
            if sample.timestamp <= previous {
                return Err(Error::NonMonotonic {
                    line,
                    previous,
                    current: sample.timestamp,
                });
            }
        }
        self.previous = Some(sample.timestamp);
        Ok(sample)
    }
}

fn parse_record(text: &str, line: u64) -> Result<Sample> {
    let parse_err = |message: String| Error::Parse { line, message };
    let text = text.trim();
    let mut fields = text.split(',');
    let (Some(ts), Some(mag), None) = (fields.next(), fields.next(), fields.next()) else {
        return Err(parse_err(format!("expected 2 fields, got {text:?}")));
    };
    let timestamp: f64 = ts
        .trim()
        .parse()
        .map_err(|_| parse_err(format!("bad timestamp {ts:?}")))?;
    let magnitude: f64 = mag
        .trim()
        .parse()
        .map_err(|_| parse_err(format!("bad magnitude {mag:?}")))?;
    if !timestamp.is_finite() {
        return Err(parse_err(format!("non-finite timestamp {ts:?}")));
    }
    if !magnitude.is_finite() {
        return Err(parse_err(format!("non-finite magnitude {mag:?}")));
    }
    Ok(Sample::new(timestamp, magnitude))
}

/// Samples read from a CSV file written by [`crate::sim::write_csv`].
pub struct CsvSamples {
    path: PathBuf,
    lines: Lines<BufReader<File>>,
    line_no: u64,
    parser: RecordParser,
    failed: bool,
}

impl Iterator for CsvSamples {
    type Item = Result<Sample>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => {
                    self.failed = true;
                    return Some(Err(Error::io(&self.path, e)));
                }
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let result = self.parser.parse(&line, self.line_no);
            self.failed = result.is_err();
            return Some(result);
        }
    }
}

/// Opens a CSV dataset. The header is checked eagerly; rows are parsed and
/// validated lazily, in file order.
pub fn read_csv(path: impl AsRef<Path>) -> Result<CsvSamples> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    match lines.next() {
        Some(Ok(header)) if header.trim() == CSV_HEADER => {}
        Some(Ok(header)) => {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header {CSV_HEADER:?}, got {header:?}"),
            })
        }
        Some(Err(e)) => return Err(Error::io(path, e)),
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "missing header".into(),
            })
        }
    }
    Ok(CsvSamples {
        path: path.to_path_buf(),
        lines,
        line_no: 1,
        parser: RecordParser::new(),
        failed: false,
    })
}

/// Outcome of feeding one live input line.
#[derive(Debug)]
pub enum LiveRecord {
    Sample(Sample),
    /// Blank line or the CSV header.
    Skipped,
    Malformed(Error),
}

/// Line-delimited live input. Malformed lines are reported, never fatal.
#[derive(Debug, Default)]
pub struct LiveParser {
    parser: RecordParser,
    line_no: u64,
}

impl LiveParser {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn feed(&mut self, line: &str) -> LiveRecord {
        self.line_no += 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed == CSV_HEADER {
            return LiveRecord::Skipped;
        }
        match self.parser.parse(trimmed, self.line_no) {
            Ok(s) => LiveRecord::Sample(s),
            Err(e) => LiveRecord::Malformed(e),
        }
    }
}

/// Zero-order-hold gap filling with stream breaks on long outages.
#[derive(Debug, Clone)]
pub struct GapFiller {
    sampling_period: f64,
    max_gap: f64,
    last: Option<Sample>,
}

impl GapFiller {
    pub fn new(sampling_period: f64, max_gap: f64) -> Self {
        assert!(sampling_period > 0.0, "sampling period must be positive");
        Self {
            sampling_period,
            max_gap,
            last: None,
        }
    }

    /// Appends the events produced by `sample` to `out`.
    pub fn push(&mut self, sample: Sample, out: &mut Vec<StreamEvent>) {
        if let Some(last) = self.last {
            let gap = sample.timestamp - last.timestamp;
            if gap > self.max_gap {
                out.push(StreamEvent::Break);
            } else if gap > 1.5 * self.sampling_period {
                let missing = (gap / self.sampling_period).round() as u64 - 1;
                for k in 1..=missing {
                    let t = last.timestamp + k as f64 * self.sampling_period;
                    out.push(StreamEvent::Sample(Sample::new(t, last.magnitude)));
                }
            }
        }
        self.last = Some(sample);
        out.push(StreamEvent::Sample(sample));
    }
}

/// Applies [`GapFiller`] to a whole stream.
pub fn resample_gaps<I>(samples: I, sampling_period: f64, max_gap: f64) -> Vec<StreamEvent>
where
    I: IntoIterator<Item = Sample>,
{
    let mut filler = GapFiller::new(sampling_period, max_gap);
    let mut out = Vec::new();
    for s in samples {
        filler.push(s, &mut out);
    }
    out
}

/// Median over a sliding window of the most recent values.
#[derive(Debug, Clone)]
pub struct RunningMedian {
    capacity: usize,
    order: VecDeque<f64>,
    sorted: Vec<f64>,
}

impl RunningMedian {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1);
        Self {
            capacity,
            order: VecDeque::with_capacity(capacity),
            sorted: Vec::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, value: f64) {
        if self.order.len() == self.capacity {
            let old = self.order.pop_front().expect("full window");
            let idx = self
                .sorted
                .binary_search_by(|v| v.total_cmp(&old))
                .expect("evicted value is tracked");
            self.sorted.remove(idx);
        }
        self.order.push_back(value);
        let idx = self.sorted.partition_point(|v| v.total_cmp(&value).is_lt());
        self.sorted.insert(idx, value);
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// Value at quantile `q` in [0, 1], lower-interpolated (no averaging).
    pub fn quantile(&self, q: f64) -> Option<f64> {
        if self.sorted.is_empty() {
            return None;
        }
        let idx = ((self.sorted.len() - 1) as f64 * q).floor() as usize;
        Some(self.sorted[idx])
    }

    pub fn median(&self) -> Option<f64> {
        let n = self.sorted.len();
        match n {
            0 => None,
            _ if n % 2 == 1 => Some(self.sorted[n / 2]),
            _ => Some(0.5 * (self.sorted[n / 2 - 1] + self.sorted[n / 2])),
        }
    }

    pub fn clear(&mut self) {
        self.order.clear();
        self.sorted.clear();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    /// Trailing window in samples (1200 = 10 min at 0.5 s).
    pub window_len: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { window_len: 1200 }
    }
}

/// Running-median baseline removal.
#[derive(Debug, Clone)]
pub struct Baseline {
    median: RunningMedian,
    estimate: f64,
}

impl Baseline {
    pub fn new(window_len: usize) -> Self {
        assert!(
            window_len >= 2,
            "baseline window must hold at least 2 samples"
        );
        Self {
            median: RunningMedian::new(window_len),
            estimate: 0.0,
        }
    }

    pub fn window_len(&self) -> usize {
        self.median.capacity
    }

    /// Current baseline estimate (0 before the first sample).
    pub fn estimate(&self) -> f64 {
        self.estimate
    }

    pub fn apply(&mut self, sample: Sample) -> Sample {
        self.median.push(sample.magnitude);
        self.estimate = self.median.median().expect("just pushed");
        Sample::new(sample.timestamp, sample.magnitude - self.estimate)
    }

    pub fn reset(&mut self) {
        self.median.clear();
        self.estimate = 0.0;
    }
}

/// Applies [`Baseline`] to a whole stream.
pub fn remove_baseline<I>(samples: I, state: &mut Baseline) -> Vec<Sample>
where
    I: IntoIterator<Item = Sample>,
{
    samples.into_iter().map(|s| state.apply(s)).collect()
}
