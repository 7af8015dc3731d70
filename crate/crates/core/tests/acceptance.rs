//! Acceptance criteria A1 to A9. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::f64::consts::TAU;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use leakwatch::alerting::{
    replay_dead_letters, AlertEvent, AlertSink, Evidence, RetryPolicy, WebhookSink,
};
use leakwatch::config::Config;
use leakwatch::detector::Verdict;
use leakwatch::flow::FlowCalibration;
use leakwatch::histostats::{significant_peak, CountGrid, SignificanceConfig};
use leakwatch::pulse::{LogBins, PulseHistogram, ZScoreState};
use leakwatch::runtime::{cmd_detect, DetectOptions};
use leakwatch::sim::{generate, write_csv, ScenarioKind, SimScenario};
use leakwatch::spectral::{hann, SpectrumAnalyzer};
use leakwatch::sweep::{run_batch, seed_sweep, RunOutcome};

struct Check {
    id: &'static str,
    pass: bool,
    detail: String,
}

fn check(id: &'static str, pass: bool, detail: String) -> Check {
    Check { id, pass, detail }
}

fn outcomes(scenarios: &[SimScenario], cfg: &Config) -> Vec<RunOutcome> {
    run_batch(scenarios, cfg)
        .into_iter()
        .map(|r| r.expect("scenario runs"))
        .collect()
}

// ---------------------------------------------------------------- oracles

/// Smoothed z-score recomputed from scratch at every step.
fn zscore_oracle(y: &[f64], lag: usize, threshold: f64, influence: f64) -> Vec<bool> {
    let stats = |w: &[f64]| {
        let n = w.len() as f64;
        let m = w.iter().sum::<f64>() / n;
        let v = w.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
        (m, v.sqrt())
    };
    let mut flags = vec![false; y.len()];
    if y.len() <= lag {
        return flags;
    }
    let mut filtered = y[..lag].to_vec();
    for i in lag..y.len() {
        let (avg, sd) = stats(&filtered[i - lag..i]);
        if sd > 0.0 && y[i] - avg > threshold * sd {
            flags[i] = true;
            filtered.push(influence * y[i] + (1.0 - influence) * filtered[i - 1]);
        } else {
            filtered.push(y[i]);
        }
    }
    flags
}

/// One-sided |DFT| of the mean-removed, Hann-weighted window, O(N²).
fn dft_oracle(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let w = hann(n);
    let v: Vec<f64> = x.iter().zip(&w).map(|(a, b)| (a - mean) * b).collect();
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (j, s) in v.iter().enumerate() {
                let ang = TAU * (k * j) as f64 / n as f64;
                re += s * ang.cos();
                im -= s * ang.sin();
            }
            re.hypot(im)
        })
        .collect()
}

/// Significance rule written out longhand: first maximum in row-major
/// order, pooled 3x3 count, peak cell against the median of the nonzero
/// cells outside the 3x3 (1 if there are none).
fn significance_oracle(
    g: &[u32],
    rows: usize,
    cols: usize,
    min_count: u32,
    ratio: f64,
) -> Option<(usize, usize, u32)> {
    let mut best = 0usize;
    for i in 1..g.len() {
        if g[i] > g[best] {
            best = i;
        }
    }
    if g[best] == 0 {
        return None;
    }
    let (pr, pc) = (best / cols, best % cols);
    let mut pooled = 0;
    let mut outside = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let v = g[r * cols + c];
            let near = (r as i64 - pr as i64).abs() <= 1 && (c as i64 - pc as i64).abs() <= 1;
            if near {
                pooled += v;
            } else if v != 0 {
                outside.push(v);
            }
        }
    }
    outside.sort();
    let median = match outside.len() {
        0 => 1.0,
        n if n % 2 == 1 => outside[n / 2] as f64,
        n => (outside[n / 2 - 1] + outside[n / 2]) as f64 / 2.0,
    };
    (pooled >= min_count && g[best] as f64 >= ratio * median).then_some((pr, pc, pooled))
}

// -------------------------------------------------------------- criteria

fn a1(cfg: &Config) -> (Check, f64, usize) {
    let mut lines = Vec::new();
    let mut pass = true;
    let mut parseval = 0.0f64;
    let mut spectra = 0usize;
    let mut slowest = Duration::ZERO;
    for f in [0.02, 0.05, 0.1, 0.3] {
        let base = SimScenario {
            kind: ScenarioKind::Continuous,
            leak_frequency: f,
            leak_amplitude: 1.0,
            noise_sigma: 1.0,
            consumption_events_per_hour: 2.0,
            duration: 2.0 * 3600.0 + 1.0,
            ..SimScenario::default()
        };
        let runs = outcomes(&seed_sweep(&base, 0, 20), cfg);
        let hits = runs
            .iter()
            .filter(|o| o.first_continuous().is_some_and(|t| t <= 7200.0))
            .count();
        for o in &runs {
            parseval = parseval.max(o.max_parseval_error);
            spectra += o.stats.spectra_computed as usize;
            slowest = slowest.max(o.elapsed);
        }
        pass &= hits * 100 >= 95 * runs.len();
        lines.push(format!("f={f}: {hits}/20"));
    }
    pass &= slowest < Duration::from_secs(5);
    let detail = format!(
        "{}; slowest run {:.2}s",
        lines.join(", "),
        slowest.as_secs_f64()
    );
    (check("A1", pass, detail), parseval, spectra)
}

fn a2(cfg: &Config) -> Check {
    let durations = LogBins::new(
        cfg.pulse.duration_range[0],
        cfg.pulse.duration_range[1],
        PulseHistogram::DURATION_BINS,
    );
    let periods = LogBins::new(
        cfg.pulse.period_range[0],
        cfg.pulse.period_range[1],
        PulseHistogram::PERIOD_BINS,
    );
    let mut lines = Vec::new();
    let mut pass = true;
    for (period, duration) in [(60.0, 10.0), (600.0, 60.0), (1800.0, 120.0)] {
        let base = SimScenario {
            kind: ScenarioKind::Periodic,
            pulse_period: period,
            pulse_duration: duration,
            leak_amplitude: 1.0,
            noise_sigma: 1.0,
            consumption_events_per_hour: 2.0,
            duration: 6.0 * 3600.0 + 1.0,
            ..SimScenario::default()
        };
        let runs = outcomes(&seed_sweep(&base, 0, 20), cfg);
        let (true_d, true_p) = (
            durations.bin_of(duration).unwrap(),
            periods.bin_of(period).unwrap(),
        );
        // the first periodic verdict must be on time and name the right cell
        // (one bin of slack each way)
        let hits = runs
            .iter()
            .filter(|o| {
                o.verdicts
                    .iter()
                    .find_map(|v| match v {
                        Verdict::Periodic(p) => Some(p),
                        _ => None,
                    })
                    .is_some_and(|p| {
                        p.detected_at <= 21600.0
                            && periods
                                .bin_of(p.modal_period)
                                .is_some_and(|b| b.abs_diff(true_p) <= 1)
                            && durations
                                .bin_of(p.modal_duration)
                                .is_some_and(|b| b.abs_diff(true_d) <= 1)
                    })
            })
            .count();
        pass &= hits * 100 >= 95 * runs.len();
        lines.push(format!("({period},{duration}): {hits}/20"));
    }
    check("A2", pass, lines.join(", "))
}

fn a3(cfg: &Config) -> Check {
    let n = 50u64;
    let scenarios: Vec<SimScenario> = (0..n)
        .map(|i| SimScenario {
            kind: ScenarioKind::NoLeak,
            consumption_events_per_hour: 0.5 + 5.5 * i as f64 / (n - 1) as f64,
            duration: 24.0 * 3600.0,
            rng_seed: 1000 + i,
            ..SimScenario::default()
        })
        .collect();
    let runs = outcomes(&scenarios, cfg);
    let alerts: usize = runs.iter().map(|o| o.alerts.len()).sum();
    let verdicts: usize = runs.iter().map(|o| o.verdicts.len()).sum();
    check(
        "A3",
        alerts == 0,
        format!("{n} x 24 h no-leak: {alerts} alerts, {verdicts} verdicts"),
    )
}

fn a4() -> Check {
    let mut mismatches = 0usize;
    let mut flagged = 0usize;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lag = rng.random_range(2..=60);
        let threshold = rng.random_range(1.0..4.0);
        let influence = [0.0, 0.25, 0.5, 1.0][seed as usize % 4];
        let y: Vec<f64> = (0..10_000)
            .map(|_| {
                let spike = if rng.random_bool(0.02) {
                    rng.random_range(3.0..10.0)
                } else {
                    0.0
                };
                rng.random_range(-1.0..1.0) + spike
            })
            .collect();
        let mut z = ZScoreState::new(lag, threshold, influence);
        let streamed: Vec<bool> = y.iter().map(|&v| z.step(v)).collect();
        let direct = zscore_oracle(&y, lag, threshold, influence);
        mismatches += streamed.iter().zip(&direct).filter(|(a, b)| a != b).count();
        flagged += direct.iter().filter(|&&f| f).count();
    }
    check(
        "A4",
        mismatches == 0,
        format!("10 seeds x 10000 samples: {mismatches} mismatches ({flagged} flags)"),
    )
}

fn a5(parseval: f64, spectra: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut analyzer = SpectrumAnalyzer::new(64, 0.5);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let x: Vec<f64> = (0..64).map(|_| rng.random_range(-10.0..10.0)).collect();
        let fast = analyzer.analyze(x.iter().copied(), 0.0);
        let slow = dft_oracle(&x);
        for (a, b) in fast.magnitudes.iter().zip(&slow) {
            worst = worst.max((a - b).abs() / b.abs().max(f64::MIN_POSITIVE));
        }
    }
    check(
        "A5",
        worst <= 1e-9 && parseval <= 1e-6 && spectra > 0,
        format!("DFT max rel err {worst:.2e}; Parseval max {parseval:.2e} over {spectra} spectra"),
    )
}

fn a6() -> Check {
    let cal = FlowCalibration::default();
    let lo = cal.estimate(0.01).unwrap().gal_per_hour;
    let hi = cal.estimate(0.4).unwrap().gal_per_hour;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut violations = 0;
    for _ in 0..1000 {
        let a: f64 = rng.random_range(1e-4..1.0);
        let b: f64 = rng.random_range(1e-4..1.0);
        let (fa, fb) = (
            cal.estimate(a).unwrap().gal_per_hour,
            cal.estimate(b).unwrap().gal_per_hour,
        );
        if (a < b && fa > fb) || (a > b && fa < fb) {
            violations += 1;
        }
    }
    check(
        "A6",
        lo == 1.0 && hi == 20.0 && violations == 0,
        format!("estimate(0.01)={lo}, estimate(0.4)={hi}, {violations} monotonicity violations in 1000 pairs"),
    )
}

fn a7(cfg: &Config) -> Check {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("mixed.csv");
    let scenario = SimScenario {
        kind: ScenarioKind::Mixed,
        consumption_events_per_hour: 3.0,
        duration: 7.0 * 3600.0,
        rng_seed: 7,
        ..SimScenario::default()
    };
    write_csv(generate(&scenario, cfg.sampling_period()).unwrap(), &input).unwrap();
    let run = |tag: &str| {
        let opts = DetectOptions {
            input: input.clone(),
            report: dir.path().join(format!("{tag}.json")),
            plots_dir: Some(dir.path().join(tag)),
            config: cfg.clone(),
        };
        cmd_detect(&opts).unwrap();
        let mut files = vec![std::fs::read(&opts.report).unwrap()];
        let mut names: Vec<_> = std::fs::read_dir(opts.plots_dir.as_ref().unwrap())
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        names.sort();
        for p in &names {
            files.push(std::fs::read(p).unwrap());
        }
        files
    };
    let (first, second) = (run("a"), run("b"));
    let report = String::from_utf8(first[0].clone()).unwrap();
    check(
        "A7",
        first == second,
        format!(
            "{} files compared, report {} bytes, leak_found {}",
            first.len(),
            first[0].len(),
            report.contains("\"leak_found\": true")
        ),
    )
}

fn a8() -> Check {
    let cfg = SignificanceConfig::pulse_default();
    let agree = |g: &[u32], rows: usize, cols: usize| {
        let fast = significant_peak(&CountGrid::new(g, rows, cols), &cfg, None)
            .map(|p| (p.row, p.col, p.pooled));
        fast == significance_oracle(g, rows, cols, cfg.min_count, cfg.dominance_ratio)
    };
    // every 3x3 grid over {0..6}
    let full: u64 = 7u64.pow(9);
    let bad3 = (0..7u64.pow(2))
        .into_par_iter()
        .map(|hi| {
            let mut g = [0u32; 9];
            let mut bad = 0u64;
            for lo in 0..7u64.pow(7) {
                let mut code = hi * 7u64.pow(7) + lo;
                for cell in g.iter_mut() {
                    *cell = (code % 7) as u32;
                    code /= 7;
                }
                bad += u64::from(!agree(&g, 3, 3));
            }
            bad
        })
        .sum::<u64>();
    // larger shapes have too many grids to enumerate; sample them densely
    let mut sampled = 0u64;
    let bad_big: u64 = [(3usize, 4usize), (4, 4), (4, 5), (5, 5), (5, 6), (6, 6)]
        .into_par_iter()
        .map(|(rows, cols)| {
            let mut rng = ChaCha8Rng::seed_from_u64((rows * 10 + cols) as u64);
            let mut g = vec![0u32; rows * cols];
            let mut bad = 0u64;
            for _ in 0..500_000 {
                let sparsity = rng.random_range(0.0..1.0);
                for cell in g.iter_mut() {
                    *cell = if rng.random_bool(sparsity) {
                        0
                    } else {
                        rng.random_range(0..=6)
                    };
                }
                bad += u64::from(!agree(&g, rows, cols));
            }
            bad
        })
        .sum();
    sampled += 6 * 500_000;
    check(
        "A8",
        bad3 == 0 && bad_big == 0,
        format!("3x3 exhaustive ({full} grids): {bad3} mismatches; 3x4..6x6 sampled ({sampled} grids): {bad_big} mismatches"),
    )
}

/// Minimal HTTP endpoint: records each request body with its arrival time
/// and answers with the status the script picks for that request number.
struct TestServer {
    url: String,
    hits: Arc<Mutex<Vec<(Instant, String)>>>,
}

impl TestServer {
    fn start(script: impl Fn(usize) -> u16 + Send + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/hook", listener.local_addr().unwrap());
        let hits = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&hits);
        std::thread::spawn(move || {
            for (n, stream) in listener.incoming().enumerate() {
                let Ok(stream) = stream else { continue };
                let body = read_request(&stream);
                log.lock().unwrap().push((Instant::now(), body));
                let status = script(n);
                let mut s = stream;
                let _ = write!(
                    s,
                    "HTTP/1.1 {status} X\r\nContent-Length: 0\r\nConnection: close\r\n\r\n"
                );
            }
        });
        Self { url, hits }
    }
}

fn read_request(stream: &TcpStream) -> String {
    let mut reader = BufReader::new(stream);
    let mut length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0; length];
    let _ = reader.read_exact(&mut body);
    String::from_utf8_lossy(&body).into_owned()
}

fn event(id: u64) -> AlertEvent {
    AlertEvent {
        alert_id: id,
        detected_at: 7200.0 * id as f64,
        support: 9,
        evidence: Evidence::Periodic {
            modal_period: 600.0,
            modal_duration: 60.0,
        },
    }
}

fn a9() -> Check {
    let dir = tempfile::tempdir().unwrap();

    // three failures, then success: gaps should read 1, 2, 4 s
    let flaky = TestServer::start(|n| if n < 3 { 503 } else { 200 });
    let mut hook = WebhookSink::new(
        &flaky.url,
        dir.path().join("unused.jsonl"),
        RetryPolicy::default(),
    );
    let attempts = hook.deliver(&event(1)).ok();
    let times: Vec<Instant> = flaky.hits.lock().unwrap().iter().map(|h| h.0).collect();
    let gaps: Vec<f64> = times
        .windows(2)
        .map(|w| (w[1] - w[0]).as_secs_f64())
        .collect();
    let schedule_ok = attempts == Some(4)
        && gaps.len() == 3
        && gaps
            .iter()
            .zip([1.0, 2.0, 4.0])
            .all(|(g, want)| (g - want).abs() <= 0.2 * want);

    // permanent failure: everything lands in the dead-letter file, then a
    // replay against a healthy endpoint delivers each event exactly once
    let dead = dir.path().join("dead.jsonl");
    let down = TestServer::start(|_| 500);
    let mut failing = WebhookSink::new(&down.url, &dead, RetryPolicy::default()).with_sleep(|_| {});
    let sent = 25u64;
    let failures = (1..=sent)
        .filter(|&id| failing.deliver(&event(id)).is_err())
        .count();
    let healthy = TestServer::start(|_| 200);
    let mut working = WebhookSink::new(&healthy.url, &dead, RetryPolicy::default());
    let replay = replay_dead_letters(&dead, &mut working).unwrap();
    let mut got: Vec<u64> = healthy
        .hits
        .lock()
        .unwrap()
        .iter()
        .map(|(_, body)| AlertEvent::from_json(body).unwrap().alert_id)
        .collect();
    got.sort();
    let left = std::fs::read_to_string(&dead).unwrap_or_default();
    let replay_ok = failures as u64 == sent
        && got == (1..=sent).collect::<Vec<_>>()
        && replay.remaining == 0
        && left.trim().is_empty();

    check(
        "A9",
        schedule_ok && replay_ok,
        format!(
            "backoff gaps {:?} s over {:?} attempts; dead-lettered {failures}/{sent}, replayed {} ({} remain)",
            gaps.iter().map(|g| (g * 100.0).round() / 100.0).collect::<Vec<_>>(),
            attempts,
            got.len(),
            replay.remaining
        ),
    )
}

fn main() {
    // `cargo test -- <filter>` style arguments are accepted and ignored
    let cfg = Config::default();
    let started = Instant::now();
    let (c1, parseval, spectra) = a1(&cfg);
    let checks = vec![
        c1,
        a2(&cfg),
        a3(&cfg),
        a4(),
        a5(parseval, spectra),
        a6(),
        a7(&cfg),
        a8(),
        a9(),
    ];
    for c in &checks {
        println!(
            "{} {}  {}",
            c.id,
            if c.pass { "PASS" } else { "FAIL" },
            c.detail
        );
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.id).collect();
    println!(
        "acceptance: {} passed, {} failed in {:.1}s",
        checks.len() - failed.len(),
        failed.len(),
        started.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
