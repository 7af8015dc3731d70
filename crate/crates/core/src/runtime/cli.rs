//! Command-line front end: `simulate`, `detect` and `run`.

use std::ffi::OsString;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use crate::alerting::WEBHOOK_ENV;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::runtime::{
    DetectOptions, RunConfig, RunOutput, ServiceHandles, ServiceOptions, SimulateOptions,
};
use crate::sim::{ScenarioKind, SimScenario};

/// Exit status for bad flags, scenarios or configuration.
pub const EXIT_USAGE: i32 = 2;
/// Exit status for failures while running.
pub const EXIT_FAILURE: i32 = 1;

#[derive(Debug, Parser)]
#[command(
    name = "leakwatch",
    version,
    about = "Slow-leak detection for water-meter magnetometer signals"
)]
pub struct Cli {
    /// JSON file overriding any detector default.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic magnetometer dataset as CSV.
    Simulate(SimulateArgs),
    /// Replay a CSV file through the detector and write a report.
    Detect(DetectArgs),
    /// Detect on a live stream of CSV lines.
    Run(RunArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario JSON file; other flags override its fields.
    #[arg(long, value_name = "FILE")]
    pub scenario: Option<PathBuf>,
    /// none, continuous, periodic or mixed.
    #[arg(long, value_parser = parse_kind)]
    pub kind: Option<ScenarioKind>,
    /// Continuous-leak frequency, Hz.
    #[arg(long)]
    pub freq: Option<f64>,
    /// Seconds between pulse onsets.
    #[arg(long)]
    pub period: Option<f64>,
    /// Seconds per pulse.
    #[arg(long)]
    pub pulse_duration: Option<f64>,
    /// Pulse carrier frequency, Hz.
    #[arg(long)]
    pub carrier: Option<f64>,
    #[arg(long)]
    pub amplitude: Option<f64>,
    /// Noise standard deviation.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Consumption bursts per hour.
    #[arg(long)]
    pub bursts: Option<f64>,
    #[arg(long)]
    pub hours: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV; stdout when absent.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    /// Input CSV (`timestamp_s,magnitude`).
    pub input: PathBuf,
    #[arg(long, value_name = "FILE", default_value = "report.json")]
    pub report: PathBuf,
    /// Directory for plot-data CSVs.
    #[arg(long, value_name = "DIR")]
    pub plots: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Input CSV stream; stdin when absent.
    #[arg(long, value_name = "FILE")]
    pub input: Option<PathBuf>,
    /// Serve GET /status on this host:port.
    #[arg(long, value_name = "ADDR")]
    pub status: Option<String>,
    /// Pace replay at this many logical seconds per wall second.
    #[arg(long, value_name = "FACTOR")]
    pub time_acceleration: Option<f64>,
    /// Append alert JSON lines to this file.
    #[arg(long, value_name = "FILE")]
    pub alerts_file: Option<PathBuf>,
    /// Do not print alerts on stdout.
    #[arg(long)]
    pub no_stdout_alerts: bool,
    #[arg(long, env = WEBHOOK_ENV, value_name = "URL")]
    pub webhook_url: Option<String>,
    /// Where undeliverable webhook alerts are kept.
    #[arg(
        long,
        value_name = "FILE",
        default_value = "leakwatch-dead-letter.jsonl"
    )]
    pub dead_letter: PathBuf,
    /// Redeliver the dead-letter file before starting.
    #[arg(long)]
    pub replay_dead_letters: bool,
}

fn parse_kind(s: &str) -> std::result::Result<ScenarioKind, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_")))
        .map_err(|_| format!("unknown scenario kind {s:?} (none, continuous, periodic, mixed)"))
}

fn load_config(path: &Option<PathBuf>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default()),
    }
}

fn scenario_from(args: &SimulateArgs) -> Result<SimScenario> {
    let mut s = match &args.scenario {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::InvalidScenario(format!("{}: {e}", path.display())))?
        }
        None => SimScenario::default(),
    };
    if let Some(v) = args.kind {
        s.kind = v;
    }
    if let Some(v) = args.freq {
        s.leak_frequency = v;
    }
    if let Some(v) = args.period {
        s.pulse_period = v;
    }
    if let Some(v) = args.pulse_duration {
        s.pulse_duration = v;
    }
    if let Some(v) = args.carrier {
        s.carrier_frequency = v;
    }
    if let Some(v) = args.amplitude {
        s.leak_amplitude = v;
    }
    if let Some(v) = args.noise {
        s.noise_sigma = v;
    }
    if let Some(v) = args.bursts {
        s.consumption_events_per_hour = v;
    }
    if let Some(v) = args.hours {
        s.duration = v * 3600.0;
    }
    if let Some(v) = args.seed {
        s.rng_seed = v;
    }
    Ok(s)
}

impl Cli {
    /// Resolves flags and files into a validated [`RunConfig`].
    pub fn resolve(&self) -> Result<RunConfig> {
        let config = load_config(&self.config)?;
        let run = match &self.command {
            Command::Simulate(a) => RunConfig::Simulate(SimulateOptions {
                scenario: scenario_from(a)?,
                sampling_period: config.sampling_period(),
                out: a.out.clone(),
            }),
            Command::Detect(a) => RunConfig::Replay(DetectOptions {
                input: a.input.clone(),
                report: a.report.clone(),
                plots_dir: a.plots.clone(),
                config,
            }),
            Command::Run(a) => {
                let mut o = ServiceOptions::new(config);
                o.input = a.input.clone();
                o.status_listen = a.status.clone();
                o.time_acceleration = a.time_acceleration;
                o.alerts_stdout = !a.no_stdout_alerts;
                o.alerts_file = a.alerts_file.clone();
                o.webhook_url = a.webhook_url.clone().filter(|u| !u.trim().is_empty());
                o.dead_letter = a.dead_letter.clone();
                o.replay_dead_letters = a.replay_dead_letters;
                RunConfig::Live(o)
            }
        };
        run.validate()?;
        Ok(run)
    }
}

fn is_usage(e: &Error) -> bool {
    matches!(
        e,
        Error::InvalidScenario(_) | Error::InvalidConfig(_) | Error::Json(_)
    )
}

/// Parses `args` (program name first), runs the verb and returns the exit
/// status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let run = match cli.resolve() {
        Ok(run) => run,
        Err(e) => {
            eprintln!("leakwatch: {e}");
            return if is_usage(&e) {
                EXIT_USAGE
            } else {
                EXIT_FAILURE
            };
        }
    };
    let handles = ServiceHandles::default();
    if matches!(run, RunConfig::Live(_)) {
        forward_termination(handles.stop.clone());
    }
    match run.execute(handles) {
        Ok(out) => {
            report(&run, &out);
            0
        }
        Err(e) => {
            eprintln!("leakwatch: {e}");
            EXIT_FAILURE
        }
    }
}

static TERMINATED: AtomicBool = AtomicBool::new(false);

#[cfg(unix)]
extern "C" fn on_signal(_: libc::c_int) {
    TERMINATED.store(true, Ordering::Release);
}

/// Sets `stop` once SIGINT or SIGTERM arrives, so the service can drain and
/// print its summary instead of dying mid-line.
fn forward_termination(stop: Arc<AtomicBool>) {
    #[cfg(unix)]
    // SAFETY: the handler only stores to an atomic, which is signal-safe.
    unsafe {
        let handler = on_signal as extern "C" fn(libc::c_int) as libc::sighandler_t;
        libc::signal(libc::SIGINT, handler);
        libc::signal(libc::SIGTERM, handler);
    }
    let spawned = std::thread::Builder::new()
        .name("signals".into())
        .spawn(move || loop {
            if TERMINATED.load(Ordering::Acquire) {
                stop.store(true, Ordering::Release);
                return;
            }
            std::thread::sleep(std::time::Duration::from_millis(20));
        });
    if let Err(e) = spawned {
        eprintln!("leakwatch: no signal forwarding: {e}");
    }
}

fn report(run: &RunConfig, out: &RunOutput) {
    match out {
        RunOutput::Simulate(s) => {
            let line = serde_json::to_string(s).expect("summary serializes");
            match run {
                // stdout carries the data
                RunConfig::Simulate(o) if o.out.is_none() => eprintln!("{line}"),
                _ => println!("{line}"),
            }
        }
        RunOutput::Replay(r) => {
            println!(
                "{}",
                serde_json::json!({
                    "leak_found": r.leak_found,
                    "verdicts": r.verdicts.len(),
                    "alerts": r.alerts.len(),
                    "samples_processed": r.samples_processed,
                })
            );
        }
        RunOutput::Live(s) => {
            eprintln!("{}", serde_json::to_string(s).expect("summary serializes"));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(args: &[&str]) -> Result<RunConfig> {
        Cli::try_parse_from(std::iter::once("leakwatch").chain(args.iter().copied()))
            .expect("flags parse")
            .resolve()
    }

    #[test]
    fn simulate_flags_fill_the_scenario() {
        let run = resolve(&[
            "simulate",
            "--kind",
            "continuous",
            "--freq",
            "0.05",
            "--hours",
            "3",
            "--seed",
            "1",
        ])
        .unwrap();
        let RunConfig::Simulate(o) = run else {
            panic!("wrong verb")
        };
        assert_eq!(o.scenario.kind, ScenarioKind::Continuous);
        assert_eq!(o.scenario.duration, 10800.0);
        assert_eq!(o.scenario.rng_seed, 1);
        assert_eq!(o.sampling_period, 0.5);
    }

    #[test]
    fn bad_scenario_is_a_usage_error() {
        let e = resolve(&["simulate", "--kind", "continuous", "--freq", "3"]).unwrap_err();
        assert!(is_usage(&e));
        assert_eq!(
            main_with_args(["leakwatch", "simulate", "--kind", "bogus"]),
            EXIT_USAGE
        );
        assert_eq!(
            main_with_args(["leakwatch", "simulate", "--hours", "-1"]),
            EXIT_USAGE
        );
    }

    #[test]
    fn none_alias_parses() {
        assert_eq!(parse_kind("none"), Ok(ScenarioKind::NoLeak));
        assert_eq!(parse_kind("no-leak"), Ok(ScenarioKind::NoLeak));
    }
}
