use serde::{Deserialize, Serialize};

/// One detected pulse. `duration == end - start`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pulse {
    pub start: f64,
    pub end: f64,
    pub duration: f64,
    /// Largest detection statistic inside the pulse.
    pub peak: f64,
    /// Center of the sub-band the pulse was found in, Hz.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub carrier_hz: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
enum State {
    Idle {
        run_start: f64,
        run_len: usize,
    },
    Open {
        start: f64,
        peak: f64,
        quiet_start: f64,
        quiet_len: usize,
    },
}

/// Turns a flag stream into pulses.
///
/// A pulse opens after `debounce` consecutive raised flags (its start is the
/// first of them) and closes after `debounce` consecutive quiet flags (its end
/// is the first quiet one). Pulses whose duration falls outside
/// `duration_range` are dropped.
#[derive(Debug, Clone)]
pub struct PulseAssembler {
    debounce: usize,
    duration_range: [f64; 2],
    state: State,
}

impl PulseAssembler {
    pub fn new(debounce: usize, duration_range: [f64; 2]) -> Self {
        assert!(debounce >= 1, "debounce must be at least one sample");
        Self {
            debounce,
            duration_range,
            state: State::Idle {
                run_start: 0.0,
                run_len: 0,
            },
        }
    }

    pub fn is_open(&self) -> bool {
        matches!(self.state, State::Open { .. })
    }

    /// Start of the pulse being opened or already open, if any. No pulse
    /// this assembler completes later can start before it.
    pub fn pending_start(&self) -> Option<f64> {
        match self.state {
            State::Idle { run_len: 0, .. } => None,
            State::Idle { run_start, .. } => Some(run_start),
            State::Open { start, .. } => Some(start),
        }
    }

    pub fn push(&mut self, timestamp: f64, flagged: bool, z: f64) -> Option<Pulse> {
        match &mut self.state {
            State::Idle { run_start, run_len } => {
                if !flagged {
                    *run_len = 0;
                    return None;
                }
                if *run_len == 0 {
                    *run_start = timestamp;
                }
                *run_len += 1;
                if *run_len >= self.debounce {
                    self.state = State::Open {
                        start: *run_start,
                        peak: z,
                        quiet_start: timestamp,
                        quiet_len: 0,
                    };
                }
                None
            }
            State::Open {
                start,
                peak,
                quiet_start,
                quiet_len,
            } => {
                if flagged {
                    *quiet_len = 0;
                    *peak = peak.max(z);
                    return None;
                }
                if *quiet_len == 0 {
                    *quiet_start = timestamp;
                }
                *quiet_len += 1;
                if *quiet_len < self.debounce {
                    return None;
                }
                let pulse = Pulse {
                    start: *start,
                    end: *quiet_start,
                    duration: *quiet_start - *start,
                    peak: *peak,
                    carrier_hz: None,
                };
                self.reset();
                let [lo, hi] = self.duration_range;
                (pulse.duration >= lo && pulse.duration <= hi).then_some(pulse)
            }
        }
    }

    /// Drops any partially assembled pulse.
    pub fn reset(&mut self) {
        self.state = State::Idle {
            run_start: 0.0,
            run_len: 0,
        };
    }
}

/// Runs a whole flag stream through an assembler.
pub fn assemble_pulses<I>(flags: I, debounce: usize, duration_range: [f64; 2]) -> Vec<Pulse>
where
    I: IntoIterator<Item = (f64, bool)>,
{
    let mut asm = PulseAssembler::new(debounce, duration_range);
    flags
        .into_iter()
        .filter_map(|(t, f)| asm.push(t, f, if f { 1.0 } else { 0.0 }))
        .collect()
}
