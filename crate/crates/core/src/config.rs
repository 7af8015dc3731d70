//! Detector configuration, loadable from JSON. Every field is optional in the
//! file; missing fields keep their defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::alerting::AlertPolicy;
use crate::error::{Error, Result};
use crate::flow::FlowCalibration;
use crate::histostats::SignificanceConfig;
use crate::ingest::BaselineConfig;
use crate::pulse::PulseConfig;
use crate::spectral::SpectralConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Outages longer than this (seconds) break the stream; shorter gaps are
    /// filled by holding the last value.
    pub max_gap: f64,
    pub baseline: BaselineConfig,
    pub spectral: SpectralConfig,
    pub pulse: PulseConfig,
    pub frequency_significance: SignificanceConfig,
    pub pulse_significance: SignificanceConfig,
    pub flow_calibration: FlowCalibration,
    pub alert_policy: AlertPolicy,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            max_gap: 5.0,
            baseline: BaselineConfig::default(),
            spectral: SpectralConfig::default(),
            pulse: PulseConfig::default(),
            frequency_significance: SignificanceConfig::frequency_default(),
            pulse_significance: SignificanceConfig::pulse_default(),
            flow_calibration: FlowCalibration::default(),
            alert_policy: AlertPolicy::default(),
        }
    }
}

impl Config {
    pub fn sampling_period(&self) -> f64 {
        self.spectral.sampling_period
    }

    pub fn validate(&self) -> Result<()> {
        self.spectral.validate()?;
        self.pulse.validate(self.sampling_period())?;
        self.frequency_significance.validate()?;
        self.pulse_significance.validate()?;
        if self.baseline.window_len < 2 {
            return Err(Error::InvalidConfig(
                "baseline window_len must be at least 2".into(),
            ));
        }
        if !(self.max_gap >= self.sampling_period()) {
            return Err(Error::InvalidConfig(format!(
                "max_gap ({}) must be at least one sampling period",
                self.max_gap
            )));
        }
        self.alert_policy.validate(
            self.spectral.analysis_interval,
            self.pulse.analysis_interval,
        )
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Config = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
