//! Piston frequency to leak flow.
//!
//! The default table maps 0.01–0.4 Hz onto 1–20 Gal/h for an AMCO C700-class
//! meter. Between calibration points the estimate is linear; outside them it
//! clamps to the nearest endpoint and says so.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Calibration table, serialized as an array of `[hz, gal_per_h]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct FlowCalibration {
    points: Vec<(f64, f64)>,
}

impl FlowCalibration {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidConfig(
                "flow calibration needs at least 2 points".into(),
            ));
        }
        for pair in points.windows(2) {
            let ((f0, q0), (f1, q1)) = (pair[0], pair[1]);
            if !(f1 > f0) || !(q1 > q0) {
                return Err(Error::InvalidConfig(format!(
                    "flow calibration must be strictly increasing: ({f0}, {q0}) then ({f1}, {q1})"
                )));
            }
        }
        if points
            .iter()
            .any(|&(f, q)| !f.is_finite() || !q.is_finite() || f <= 0.0)
        {
            return Err(Error::InvalidConfig(
                "flow calibration points must be finite with positive frequency".into(),
            ));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn estimate(&self, frequency: f64) -> Result<FlowEstimate> {
        estimate(frequency, self)
    }
}

impl Default for FlowCalibration {
    fn default() -> Self {
        Self {
            points: vec![(0.01, 1.0), (0.4, 20.0)],
        }
    }
}

impl TryFrom<Vec<(f64, f64)>> for FlowCalibration {
    type Error = Error;

    fn try_from(points: Vec<(f64, f64)>) -> Result<Self> {
        Self::new(points)
    }
}

impl From<FlowCalibration> for Vec<(f64, f64)> {
    fn from(cal: FlowCalibration) -> Self {
        cal.points
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowEstimate {
    pub gal_per_hour: f64,
    /// False when the frequency fell outside the calibrated range and the
    /// estimate was clamped to an endpoint.
    pub in_band: bool,
}

pub fn estimate(frequency: f64, cal: &FlowCalibration) -> Result<FlowEstimate> {
    if !(frequency > 0.0) || !frequency.is_finite() {
        return Err(Error::NonPositiveFrequency(frequency));
    }
    let pts = &cal.points;
    let (first, last) = (pts[0], pts[pts.len() - 1]);
    if frequency < first.0 {
        return Ok(FlowEstimate {
            gal_per_hour: first.1,
            in_band: false,
        });
    }
    if frequency > last.0 {
        return Ok(FlowEstimate {
            gal_per_hour: last.1,
            in_band: false,
        });
    }
    // first segment whose right end is at or beyond the frequency
    let seg = pts
        .windows(2)
        .find(|w| frequency <= w[1].0)
        .expect("frequency within calibrated range");
    let ((f0, q0), (f1, q1)) = (seg[0], seg[1]);
    let gal_per_hour = if frequency == f1 {
        q1
    } else {
        q0 + (q1 - q0) * (frequency - f0) / (f1 - f0)
    };
    Ok(FlowEstimate {
        gal_per_hour,
        in_band: true,
    })
}
