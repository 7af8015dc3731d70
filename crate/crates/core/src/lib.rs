//! Streaming slow-leak detection for residential water-meter magnetometer
//! signals.
//!
//! Two detection paths share one moving window of samples:
//!
//! - the spectral path computes a magnitude spectrum every few minutes,
//!   classifies its peaks and accumulates them into a frequency histogram.
//!   A significant histogram peak inside the leak band means a continuous
//!   leak.
//! - the pulse path splits samples leaving the window into narrow sub-bands,
//!   flags stretches where a band's power stands well above its own running
//!   floor, assembles those into pulses and accumulates a period–duration
//!   histogram. A significant cell means a periodic leak. A smoothed z-score
//!   front end is kept as an alternative.
//!
//! [`detector::LeakDetector`] wires both paths together; [`runtime`] hosts
//! the CLI verbs and the status endpoint.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alerting;
pub mod config;
pub mod detector;
pub mod error;
pub mod flow;
pub mod histostats;
pub mod ingest;
pub mod pulse;
pub mod runtime;
pub mod sample;
pub mod sim;
pub mod spectral;
pub mod sweep;

pub use error::{Error, Result};
pub use sample::{Sample, StreamEvent};
