use std::io::Write;
use std::path::PathBuf;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::sim::{format_row, generate, write_csv, SimScenario, CSV_HEADER};

#[derive(Debug, Clone, PartialEq)]
pub struct SimulateOptions {
    pub scenario: SimScenario,
    pub sampling_period: f64,
    /// `None` writes to stdout.
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateSummary {
    pub samples: u64,
    pub duration_s: f64,
    pub scenario: SimScenario,
}

/// Writes the scenario's dataset as CSV.
pub fn cmd_simulate(opts: &SimulateOptions) -> Result<SimulateSummary> {
    let samples = generate(&opts.scenario, opts.sampling_period)?;
    let rows = match &opts.out {
        Some(path) => write_csv(samples, path)?,
        None => {
            let stdout = std::io::stdout();
            let mut out = std::io::BufWriter::new(stdout.lock());
            let io = |e| Error::io("<stdout>", e);
            writeln!(out, "{CSV_HEADER}").map_err(io)?;
            let mut rows = 0;
            for s in samples {
                writeln!(out, "{}", format_row(&s)).map_err(io)?;
                rows += 1;
            }
            out.flush().map_err(io)?;
            rows
        }
    };
    Ok(SimulateSummary {
        samples: rows,
        duration_s: opts.scenario.duration,
        scenario: opts.scenario.clone(),
    })
}
