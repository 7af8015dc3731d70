//! Verdicts → deduplicated alert events → sinks.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::detector::Verdict;
use crate::error::{Error, Result};

/// Environment variable naming the webhook endpoint.
pub const WEBHOOK_ENV: &str = "LEAKWATCH_WEBHOOK_URL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlertKind {
    Continuous,
    Periodic,
}

impl AlertKind {
    fn index(self) -> usize {
        match self {
            AlertKind::Continuous => 0,
            AlertKind::Periodic => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Evidence {
    Continuous {
        /// Not part of the wire format; `None` for events read back from JSON.
        peak_frequency: Option<f64>,
        estimated_flow: f64,
    },
    Periodic {
        modal_period: f64,
        modal_duration: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlertEvent {
    pub alert_id: u64,
    pub detected_at: f64,
    pub support: u32,
    pub evidence: Evidence,
}

/// The canonical wire body. Field order is the serialization order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlertJson {
    pub alert_id: u64,
    pub kind: AlertKind,
    pub detected_at_s: f64,
    pub estimated_flow_gal_h: Option<f64>,
    pub modal_period_s: Option<f64>,
    pub modal_duration_s: Option<f64>,
    pub support: u32,
}

impl AlertEvent {
    pub fn kind(&self) -> AlertKind {
        match self.evidence {
            Evidence::Continuous { .. } => AlertKind::Continuous,
            Evidence::Periodic { .. } => AlertKind::Periodic,
        }
    }

    pub fn to_wire(&self) -> AlertJson {
        let (flow, period, duration) = match self.evidence {
            Evidence::Continuous { estimated_flow, .. } => (Some(estimated_flow), None, None),
            Evidence::Periodic {
                modal_period,
                modal_duration,
            } => (None, Some(modal_period), Some(modal_duration)),
        };
        AlertJson {
            alert_id: self.alert_id,
            kind: self.kind(),
            detected_at_s: self.detected_at,
            estimated_flow_gal_h: flow,
            modal_period_s: period,
            modal_duration_s: duration,
            support: self.support,
        }
    }

    /// One-line canonical JSON.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_wire()).expect("alert body serializes")
    }

    pub fn from_json(line: &str) -> Result<Self> {
        let wire: AlertJson = serde_json::from_str(line)?;
        Self::try_from(wire)
    }
}

impl TryFrom<AlertJson> for AlertEvent {
    type Error = Error;

    fn try_from(w: AlertJson) -> Result<Self> {
        let evidence = match (
            w.kind,
            w.estimated_flow_gal_h,
            w.modal_period_s,
            w.modal_duration_s,
        ) {
            (AlertKind::Continuous, Some(flow), None, None) => Evidence::Continuous {
                peak_frequency: None,
                estimated_flow: flow,
            },
            (AlertKind::Periodic, None, Some(p), Some(d)) => Evidence::Periodic {
                modal_period: p,
                modal_duration: d,
            },
            _ => {
                return Err(Error::Parse {
                    line: 0,
                    message: format!("alert {} has fields that do not match its kind", w.alert_id),
                })
            }
        };
        Ok(Self {
            alert_id: w.alert_id,
            detected_at: w.detected_at_s,
            support: w.support,
            evidence,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlertPolicy {
    /// Minimum spacing between alerts of one kind, seconds.
    pub cooldown: f64,
    /// Inside the cooldown, re-alert when support reaches this multiple of
    /// the last alerted support.
    pub escalation_factor: f64,
}

impl Default for AlertPolicy {
    fn default() -> Self {
        Self {
            cooldown: 86400.0,
            escalation_factor: 2.0,
        }
    }
}

impl AlertPolicy {
    pub fn validate(&self, spectral_interval: f64, pulse_interval: f64) -> Result<()> {
        if !(self.cooldown >= spectral_interval && self.cooldown >= pulse_interval) {
            return Err(Error::InvalidConfig(format!(
                "alert cooldown ({} s) must be at least both analysis intervals ({} s, {} s)",
                self.cooldown, spectral_interval, pulse_interval
            )));
        }
        if !(self.escalation_factor > 1.0) {
            return Err(Error::InvalidConfig(
                "alert escalation_factor must exceed 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct LastAlert {
    at: f64,
    support: u32,
}

/// Applies an [`AlertPolicy`] to a verdict stream and numbers the events.
#[derive(Debug, Clone)]
pub struct AlertGate {
    policy: AlertPolicy,
    next_id: u64,
    last: [Option<LastAlert>; 2],
}

impl AlertGate {
    pub fn new(policy: AlertPolicy) -> Self {
        Self {
            policy,
            next_id: 1,
            last: [None; 2],
        }
    }

    pub fn emitted(&self) -> u64 {
        self.next_id - 1
    }

    pub fn submit(&mut self, verdict: &Verdict) -> Option<AlertEvent> {
        let (at, support, evidence) = match verdict {
            Verdict::Continuous(v) => (
                v.detected_at,
                v.support,
                Evidence::Continuous {
                    peak_frequency: Some(v.peak_frequency),
                    estimated_flow: v.estimated_flow.gal_per_hour,
                },
            ),
            Verdict::Periodic(v) => (
                v.detected_at,
                v.support,
                Evidence::Periodic {
                    modal_period: v.modal_period,
                    modal_duration: v.modal_duration,
                },
            ),
        };
        let kind = match evidence {
            Evidence::Continuous { .. } => AlertKind::Continuous,
            Evidence::Periodic { .. } => AlertKind::Periodic,
        };
        let slot = &mut self.last[kind.index()];
        if let Some(prev) = *slot {
            let cooling = at - prev.at < self.policy.cooldown;
            let escalated =
                f64::from(support) >= self.policy.escalation_factor * f64::from(prev.support);
            if cooling && !escalated {
                return None;
            }
        }
        *slot = Some(LastAlert { at, support });
        let event = AlertEvent {
            alert_id: self.next_id,
            detected_at: at,
            support,
            evidence,
        };
        self.next_id += 1;
        Some(event)
    }
}

/// Where alert events go.
pub trait AlertSink: Send {
    /// Delivers one event. Returns the number of attempts it took.
    fn deliver(&mut self, event: &AlertEvent) -> Result<u32>;

    fn name(&self) -> String;
}

/// Writes one JSON line per event to any writer, flushing after each.
pub struct WriterSink<W: Write + Send> {
    writer: W,
    label: String,
}

impl<W: Write + Send> WriterSink<W> {
    pub fn new(writer: W, label: impl Into<String>) -> Self {
        Self {
            writer,
            label: label.into(),
        }
    }

    pub fn into_inner(self) -> W {
        self.writer
    }
}

impl WriterSink<std::io::Stdout> {
    pub fn stdout() -> Self {
        Self::new(std::io::stdout(), "stdout")
    }
}

impl<W: Write + Send> AlertSink for WriterSink<W> {
    fn deliver(&mut self, event: &AlertEvent) -> Result<u32> {
        let mut line = event.to_json();
        line.push('\n');
        self.writer
            .write_all(line.as_bytes())
            .and_then(|_| self.writer.flush())
            .map_err(|e| Error::Delivery {
                attempts: 1,
                message: format!("{}: {e}", self.label),
            })?;
        Ok(1)
    }

    fn name(&self) -> String {
        self.label.clone()
    }
}

/// Appends JSON lines to a file. Each line goes out in a single write so a
/// crash never leaves half a line behind.
pub struct FileSink {
    path: PathBuf,
    file: File,
}

impl FileSink {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let file = open_append(&path)?;
        Ok(Self { path, file })
    }
}

fn open_append(path: &Path) -> Result<File> {
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))
}

fn append_line(file: &mut File, path: &Path, json: &str) -> Result<()> {
    let mut line = String::with_capacity(json.len() + 1);
    line.push_str(json);
    line.push('\n');
    file.write_all(line.as_bytes())
        .and_then(|_| file.sync_data())
        .map_err(|e| Error::io(path, e))
}

impl AlertSink for FileSink {
    fn deliver(&mut self, event: &AlertEvent) -> Result<u32> {
        append_line(&mut self.file, &self.path, &event.to_json()).map_err(|e| Error::Delivery {
            attempts: 1,
            message: e.to_string(),
        })?;
        Ok(1)
    }

    fn name(&self) -> String {
        format!("file:{}", self.path.display())
    }
}

/// Backoff delays between webhook attempts; one attempt more than delays.
#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub delays: Vec<Duration>,
    pub timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            delays: [1, 2, 4].map(Duration::from_secs).to_vec(),
            timeout: Duration::from_secs(10),
        }
    }
}

enum Attempt {
    Done,
    Retry(String),
    Fatal(String),
}

/// POSTs the canonical body to a URL with retries. Events that exhaust the
/// retries are appended to the dead-letter file.
pub struct WebhookSink {
    url: String,
    agent: ureq::Agent,
    retry: RetryPolicy,
    dead_letter: PathBuf,
    sleep: Box<dyn FnMut(Duration) + Send>,
}

impl WebhookSink {
    pub fn new(
        url: impl Into<String>,
        dead_letter: impl Into<PathBuf>,
        retry: RetryPolicy,
    ) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(retry.timeout))
            .build()
            .into();
        Self {
            url: url.into(),
            agent,
            retry,
            dead_letter: dead_letter.into(),
            sleep: Box::new(std::thread::sleep),
        }
    }

    /// Reads the URL from `LEAKWATCH_WEBHOOK_URL`, if set and non-empty.
    pub fn from_env(dead_letter: impl Into<PathBuf>) -> Option<Self> {
        let url = std::env::var(WEBHOOK_ENV)
            .ok()
            .filter(|u| !u.trim().is_empty())?;
        Some(Self::new(url, dead_letter, RetryPolicy::default()))
    }

    /// Replaces the sleep used between attempts (tests).
    pub fn with_sleep(mut self, sleep: impl FnMut(Duration) + Send + 'static) -> Self {
        self.sleep = Box::new(sleep);
        self
    }

    pub fn dead_letter_path(&self) -> &Path {
        &self.dead_letter
    }

    fn attempt(&self, body: &str) -> Attempt {
        let sent = self
            .agent
            .post(&self.url)
            .header("content-type", "application/json")
            .send(body);
        match sent {
            Ok(resp) => {
                let status = resp.status().as_u16();
                match status {
                    200..=299 => Attempt::Done,
                    500..=599 => Attempt::Retry(format!("HTTP {status}")),
                    _ => Attempt::Fatal(format!("HTTP {status}")),
                }
            }
            Err(e) => Attempt::Retry(e.to_string()),
        }
    }
}

impl AlertSink for WebhookSink {
    fn deliver(&mut self, event: &AlertEvent) -> Result<u32> {
        let body = event.to_json();
        let mut attempts = 0u32;
        let message = loop {
            attempts += 1;
            match self.attempt(&body) {
                Attempt::Done => return Ok(attempts),
                Attempt::Fatal(m) => break m,
                Attempt::Retry(m) => match self.retry.delays.get(attempts as usize - 1) {
                    Some(&d) => (self.sleep)(d),
                    None => break m,
                },
            }
        };
        let mut dl = open_append(&self.dead_letter)?;
        append_line(&mut dl, &self.dead_letter, &body)?;
        Err(Error::Delivery { attempts, message })
    }

    fn name(&self) -> String {
        format!("webhook:{}", self.url)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReplaySummary {
    pub delivered: usize,
    pub remaining: usize,
}

/// Redelivers every event in a dead-letter file through `sink`. Events that
/// fail again stay in the file; delivered ones are removed. Lines that are
/// not alert JSON are kept untouched.
pub fn replay_dead_letters(path: &Path, sink: &mut dyn AlertSink) -> Result<ReplaySummary> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(ReplaySummary::default()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut keep = Vec::new();
    let mut summary = ReplaySummary::default();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let delivered = AlertEvent::from_json(&line)
            .ok()
            .map(|event| sink.deliver(&event).is_ok())
            .unwrap_or(false);
        if delivered {
            summary.delivered += 1;
        } else {
            keep.push(line);
        }
    }
    summary.remaining = keep.len();
    // rewrite through a temp file so a crash keeps either the old or new list
    let tmp = path.with_extension("replay.tmp");
    let mut text = keep.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowEstimate;
    use crate::pulse::PeriodicLeakVerdict;
    use crate::spectral::ContinuousLeakVerdict;

    fn continuous(at: f64, support: u32) -> Verdict {
        Verdict::Continuous(ContinuousLeakVerdict {
            peak_frequency: 0.05,
            estimated_flow: FlowEstimate {
                gal_per_hour: 2.46,
                in_band: true,
            },
            support,
            spectra_seen: 12,
            detected_at: at,
        })
    }

    fn periodic(at: f64, support: u32) -> Verdict {
        Verdict::Periodic(PeriodicLeakVerdict {
            modal_period: 600.0,
            modal_duration: 60.0,
            support,
            duty_cycle: 0.1,
            pulses_seen: 36,
            detected_at: at,
        })
    }

    #[test]
    fn cooldown_and_escalation() {
        let mut gate = AlertGate::new(AlertPolicy::default());
        let first = gate.submit(&continuous(7200.0, 10)).unwrap();
        assert_eq!(first.alert_id, 1);
        assert!(gate.submit(&continuous(14400.0, 10)).is_none());
        assert!(gate.submit(&continuous(14400.0, 19)).is_none());
        let esc = gate.submit(&continuous(14400.0, 20)).unwrap();
        assert_eq!(esc.alert_id, 2);
        // the other kind has its own cooldown
        assert_eq!(gate.submit(&periodic(21600.0, 8)).unwrap().alert_id, 3);
        // after the cooldown anything goes again
        assert!(gate.submit(&continuous(14400.0 + 86400.0, 1)).is_some());
        assert_eq!(gate.emitted(), 4);
    }

    #[test]
    fn canonical_json_has_exact_keys_in_order() {
        let mut gate = AlertGate::new(AlertPolicy::default());
        let c = gate.submit(&continuous(7200.0, 10)).unwrap();
        assert_eq!(
            c.to_json(),
            r#"{"alert_id":1,"kind":"continuous","detected_at_s":7200.0,"estimated_flow_gal_h":2.46,"modal_period_s":null,"modal_duration_s":null,"support":10}"#
        );
        let p = gate.submit(&periodic(21600.0, 8)).unwrap();
        assert_eq!(
            p.to_json(),
            r#"{"alert_id":2,"kind":"periodic","detected_at_s":21600.0,"estimated_flow_gal_h":null,"modal_period_s":600.0,"modal_duration_s":60.0,"support":8}"#
        );
        let back = AlertEvent::from_json(&p.to_json()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn mismatched_evidence_is_rejected() {
        let bad = r#"{"alert_id":1,"kind":"periodic","detected_at_s":1.0,"estimated_flow_gal_h":2.0,"modal_period_s":null,"modal_duration_s":null,"support":3}"#;
        assert!(AlertEvent::from_json(bad).is_err());
    }

    #[test]
    fn writer_sink_emits_one_line() {
        let mut gate = AlertGate::new(AlertPolicy::default());
        let e = gate.submit(&periodic(1.0, 6)).unwrap();
        let mut sink = WriterSink::new(Vec::new(), "buf");
        assert_eq!(sink.deliver(&e).unwrap(), 1);
        let out = String::from_utf8(sink.into_inner()).unwrap();
        assert_eq!(out, format!("{}\n", e.to_json()));
    }

    #[test]
    fn policy_rejects_short_cooldown() {
        let p = AlertPolicy {
            cooldown: 3600.0,
            ..AlertPolicy::default()
        };
        assert!(p.validate(7200.0, 21600.0).is_err());
        assert!(AlertPolicy::default().validate(7200.0, 21600.0).is_ok());
    }

    #[test]
    fn unreachable_webhook_dead_letters_after_all_attempts() {
        let dir = tempfile::tempdir().unwrap();
        let dl = dir.path().join("dead.jsonl");
        let slept = std::sync::Arc::new(std::sync::Mutex::new(Vec::new()));
        let record = slept.clone();
        // port 9 on localhost is normally closed: connection refused
        let mut sink = WebhookSink::new("http://127.0.0.1:9/hook", &dl, RetryPolicy::default())
            .with_sleep(move |d| record.lock().unwrap().push(d));
        let mut gate = AlertGate::new(AlertPolicy::default());
        let e = gate.submit(&continuous(7200.0, 9)).unwrap();
        match sink.deliver(&e) {
            Err(Error::Delivery { attempts, .. }) => assert_eq!(attempts, 4),
            other => panic!("{other:?}"),
        }
        assert_eq!(
            *slept.lock().unwrap(),
            [1, 2, 4].map(Duration::from_secs).to_vec()
        );
        let text = std::fs::read_to_string(&dl).unwrap();
        assert_eq!(text, format!("{}\n", e.to_json()));

        let mut out = WriterSink::new(Vec::new(), "buf");
        let summary = replay_dead_letters(&dl, &mut out).unwrap();
        assert_eq!(
            summary,
            ReplaySummary {
                delivered: 1,
                remaining: 0
            }
        );
        assert_eq!(String::from_utf8(out.into_inner()).unwrap(), text);
        assert_eq!(std::fs::read_to_string(&dl).unwrap(), "");
    }
}
