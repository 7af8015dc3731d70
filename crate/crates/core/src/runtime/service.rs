//! Live detection service.
//!
//! Three threads: a reader turning the input into lines, the detect loop
//! (owns every piece of detector state) and an alert courier draining a
//! channel into the sinks, so a slow webhook never holds up ingest. The
//! optional status server reads the board the detect loop publishes to.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use serde::Serialize;

use crate::alerting::{
    replay_dead_letters, AlertEvent, AlertGate, AlertSink, FileSink, RetryPolicy, WebhookSink,
    WriterSink,
};
use crate::config::Config;
use crate::detector::{DetectorEvent, LeakDetector};
use crate::error::{Error, Result};
use crate::ingest::{LiveParser, LiveRecord};
use crate::runtime::status::{LastAnalysis, StatusBoard, StatusServer, StatusSnapshot};

const LINE_QUEUE: usize = 4096;
const POLL: Duration = Duration::from_millis(50);

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceOptions {
    /// `None` reads stdin.
    pub input: Option<PathBuf>,
    pub config: Config,
    /// `host:port` for the status endpoint.
    pub status_listen: Option<String>,
    /// Replay pacing: logical seconds per wall second. `None` runs as fast
    /// as input arrives.
    pub time_acceleration: Option<f64>,
    pub alerts_stdout: bool,
    pub alerts_file: Option<PathBuf>,
    pub webhook_url: Option<String>,
    pub dead_letter: PathBuf,
    pub retry: RetryPolicy,
    /// Redeliver the dead-letter file through the webhook before starting.
    pub replay_dead_letters: bool,
}

impl ServiceOptions {
    pub fn new(config: Config) -> Self {
        Self {
            input: None,
            config,
            status_listen: None,
            time_acceleration: None,
            alerts_stdout: true,
            alerts_file: None,
            webhook_url: None,
            dead_letter: PathBuf::from("leakwatch-dead-letter.jsonl"),
            retry: RetryPolicy::default(),
            replay_dead_letters: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if let Some(x) = self.time_acceleration {
            if !(x > 0.0 && x.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "time acceleration must be positive, got {x}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DeliveryStats {
    pub delivered: u64,
    pub failed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ServiceSummary {
    pub status: StatusSnapshot,
    pub delivery: DeliveryStats,
    pub interrupted: bool,
}

/// Hooks for embedding the service (tests, the CLI).
#[derive(Debug, Default, Clone)]
pub struct ServiceHandles {
    /// Set to stop ingest early; checked between lines.
    pub stop: Arc<AtomicBool>,
    /// Receives the status server's bound address once listening.
    pub on_listen: Option<mpsc::Sender<std::net::SocketAddr>>,
}

fn build_sinks(opts: &ServiceOptions) -> Result<Vec<Box<dyn AlertSink>>> {
    let mut sinks: Vec<Box<dyn AlertSink>> = Vec::new();
    if opts.alerts_stdout {
        sinks.push(Box::new(WriterSink::stdout()));
    }
    if let Some(path) = &opts.alerts_file {
        sinks.push(Box::new(FileSink::open(path.clone())?));
    }
    if let Some(url) = &opts.webhook_url {
        let mut hook = WebhookSink::new(url.clone(), opts.dead_letter.clone(), opts.retry.clone());
        if opts.replay_dead_letters {
            let r = replay_dead_letters(&opts.dead_letter, &mut hook)?;
            eprintln!(
                "leakwatch: dead-letter replay delivered {}, {} remain",
                r.delivered, r.remaining
            );
        }
        sinks.push(Box::new(hook));
    }
    Ok(sinks)
}

fn spawn_courier(
    mut sinks: Vec<Box<dyn AlertSink>>,
    rx: mpsc::Receiver<AlertEvent>,
) -> Result<thread::JoinHandle<DeliveryStats>> {
    thread::Builder::new()
        .name("alerts".into())
        .spawn(move || {
            let mut stats = DeliveryStats::default();
            for event in rx {
                for sink in sinks.iter_mut() {
                    match sink.deliver(&event) {
                        Ok(_) => stats.delivered += 1,
                        Err(e) => {
                            stats.failed += 1;
                            eprintln!(
                                "leakwatch: alert {} via {}: {e}",
                                event.alert_id,
                                sink.name()
                            );
                        }
                    }
                }
            }
            stats
        })
        .map_err(|e| Error::io("alert thread", e))
}

fn spawn_reader(input: Option<PathBuf>) -> Result<mpsc::Receiver<std::io::Result<String>>> {
    let reader: Box<dyn BufRead + Send> = match &input {
        Some(path) => Box::new(BufReader::new(
            File::open(path).map_err(|e| Error::io(path, e))?,
        )),
        None => Box::new(BufReader::new(std::io::stdin())),
    };
    let (tx, rx) = mpsc::sync_channel(LINE_QUEUE);
    thread::Builder::new()
        .name("input".into())
        .spawn(move || {
            for line in reader.lines() {
                let failed = line.is_err();
                if tx.send(line).is_err() || failed {
                    break;
                }
            }
        })
        .map_err(|e| Error::io("input thread", e))?;
    Ok(rx)
}

/// Runs until the input ends or `handles.stop` is set, then drains pending
/// alerts and returns the final counters.
pub fn cmd_run(opts: &ServiceOptions, handles: ServiceHandles) -> Result<ServiceSummary> {
    opts.validate()?;
    let mut detector = LeakDetector::new(opts.config.clone())?;
    let mut gate = AlertGate::new(opts.config.alert_policy.clone());
    let board = Arc::new(StatusBoard::new());
    let server = match &opts.status_listen {
        Some(addr) => {
            let server = StatusServer::bind(addr, Arc::clone(&board))?;
            if let Some(tx) = &handles.on_listen {
                let _ = tx.send(server.local_addr());
            }
            Some(server)
        }
        None => None,
    };
    let (alert_tx, alert_rx) = mpsc::channel();
    let courier = spawn_courier(build_sinks(opts)?, alert_rx)?;
    let lines = spawn_reader(opts.input.clone())?;

    let mut parser = LiveParser::new();
    let mut snap = StatusSnapshot::default();
    let mut events = Vec::new();
    let mut pace: Option<(f64, Instant)> = None;
    let mut interrupted = false;
    let mut read_error = None;
    loop {
        if handles.stop.load(Ordering::Acquire) {
            interrupted = true;
            break;
        }
        let line = match lines.recv_timeout(POLL) {
            Ok(Ok(line)) => line,
            Ok(Err(e)) => {
                read_error = Some(e);
                break;
            }
            Err(RecvTimeoutError::Timeout) => continue,
            Err(RecvTimeoutError::Disconnected) => break,
        };
        let sample = match parser.feed(&line) {
            LiveRecord::Sample(s) => s,
            LiveRecord::Skipped => continue,
            LiveRecord::Malformed(e) => {
                snap.input_errors += 1;
                eprintln!("leakwatch: skipped input {e}");
                board.try_publish(&snap);
                continue;
            }
        };
        if let Some(factor) = opts.time_acceleration {
            let (t0, wall0) = *pace.get_or_insert((sample.timestamp, Instant::now()));
            let due = Duration::from_secs_f64(((sample.timestamp - t0) / factor).max(0.0));
            // sleep in slices so a stop request is not held up by pacing
            while let Some(wait) = due.checked_sub(wall0.elapsed()) {
                if handles.stop.load(Ordering::Acquire) {
                    break;
                }
                thread::sleep(wait.min(POLL));
            }
        }
        detector.push(sample, &mut events);
        for event in events.drain(..) {
            if let DetectorEvent::Analysis { kind, at, verdict } = event {
                if let Some(alert) = verdict.as_ref().and_then(|v| gate.submit(v)) {
                    snap.alerts_emitted += 1;
                    // courier gone means it panicked; keep detecting
                    let _ = alert_tx.send(alert);
                }
                snap.last_analysis = Some(LastAnalysis {
                    kind,
                    at_s: at,
                    verdict,
                });
            }
        }
        let stats = detector.stats();
        snap.samples_processed = stats.samples_processed;
        snap.spectra_computed = stats.spectra_computed;
        snap.pulses_detected = stats.pulses_detected;
        board.try_publish(&snap);
    }
    board.publish(&snap);
    drop(alert_tx);
    let delivery = courier.join().unwrap_or(DeliveryStats {
        delivered: 0,
        failed: snap.alerts_emitted,
    });
    if let Some(server) = server {
        server.shutdown();
    }
    if let Some(e) = read_error {
        return Err(Error::io(
            opts.input
                .clone()
                .unwrap_or_else(|| PathBuf::from("<stdin>")),
            e,
        ));
    }
    Ok(ServiceSummary {
        status: board.snapshot(),
        delivery,
        interrupted,
    })
}
