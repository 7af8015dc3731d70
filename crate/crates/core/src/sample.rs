use serde::{Deserialize, Serialize};

/// One scalar magnetometer reading.
///
/// `timestamp` is seconds since the stream epoch and is strictly increasing
/// within a stream; `magnitude` is always finite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub timestamp: f64,
    pub magnitude: f64,
}

impl Sample {
    pub fn new(timestamp: f64, magnitude: f64) -> Self {
        Self {
            timestamp,
            magnitude,
        }
    }
}

/// Item of the canonical stream handed to detectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StreamEvent {
    Sample(Sample),
    /// The source had an outage longer than the configured maximum gap.
    /// Detectors flush windows and drop any partially assembled state.
    Break,
}
