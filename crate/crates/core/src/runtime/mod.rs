//! CLI verbs and service wiring.
//!
//! All three verbs run on logical time taken from sample timestamps, so a
//! day of data replays in about a second.

pub mod cli;
pub mod detect;
pub mod service;
pub mod simulate;
pub mod status;

use serde::Serialize;

use crate::error::{Error, Result};

pub use detect::{cmd_detect, DetectOptions, DetectReport};
pub use service::{cmd_run, ServiceHandles, ServiceOptions, ServiceSummary};
pub use simulate::{cmd_simulate, SimulateOptions, SimulateSummary};
pub use status::{StatusBoard, StatusServer, StatusSnapshot};

/// One fully resolved invocation.
#[derive(Debug, Clone, PartialEq)]
pub enum RunConfig {
    Simulate(SimulateOptions),
    Replay(DetectOptions),
    Live(ServiceOptions),
}

#[derive(Debug, Clone, Serialize)]
#[serde(untagged)]
pub enum RunOutput {
    Simulate(SimulateSummary),
    Replay(Box<DetectReport>),
    Live(Box<ServiceSummary>),
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            RunConfig::Simulate(o) => {
                if !(o.sampling_period > 0.0 && o.sampling_period.is_finite()) {
                    return Err(Error::InvalidScenario(format!(
                        "sampling period must be positive, got {}",
                        o.sampling_period
                    )));
                }
                o.scenario.validate()
            }
            RunConfig::Replay(o) => o.config.validate(),
            RunConfig::Live(o) => o.validate(),
        }
    }

    pub fn execute(&self, handles: ServiceHandles) -> Result<RunOutput> {
        self.validate()?;
        Ok(match self {
            RunConfig::Simulate(o) => RunOutput::Simulate(cmd_simulate(o)?),
            RunConfig::Replay(o) => RunOutput::Replay(Box::new(cmd_detect(o)?)),
            RunConfig::Live(o) => RunOutput::Live(Box::new(cmd_run(o, handles)?)),
        })
    }
}
