//! Reference provider processes: deterministic simulated sources for tests
//! plus a file-polling source for real batteries.
//!
//! Each provider is a single-threaded loop around one session: read the
//! source, convert to Joules, push. Only Joules ever go on the wire.

pub mod attribution;
pub mod battery;
pub mod trace;

use std::path::Path;
use std::time::{Duration, Instant};

use crate::client::{ProbeHandle, Session};
use crate::model::{Device, ErrorCode};

use battery::{BatteryAction, BatteryTracker};
use trace::{TraceEvent, TraceEventKind};

#[derive(Debug, thiserror::Error)]
pub enum ProviderError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("bad arguments: {0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Code(#[from] ErrorCode),
}

/// How fast scheduled trace events are replayed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReplaySpeed {
    /// Back to back, no sleeping: deterministic accounting for tests.
    Immediate,
    /// Wall-clock schedule divided by this multiplier (1.0 = real time).
    RealTime(f64),
}

/// What a finished provider pushed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProviderSummary {
    pub pushed_joules: f64,
    pub samples: u64,
}

/// An in-flight trace replay: probe registered, events applied one at a
/// time. Splitting the steps out lets tests interleave replay with
/// checkpoint sampling deterministically; `run_trace_provider` is the plain
/// start-to-finish loop over the same machinery.
pub struct TraceReplay<'s> {
    session: &'s mut Session,
    probe: ProbeHandle,
    pushed: f64,
    samples: u64,
}

impl<'s> TraceReplay<'s> {
    pub fn begin(session: &'s mut Session, devices: &[Device]) -> Result<Self, ProviderError> {
        let probe = session.create_probe(devices)?;
        Ok(TraceReplay { session, probe, pushed: 0.0, samples: 0 })
    }

    pub fn apply(&mut self, event: &TraceEvent) -> Result<(), ProviderError> {
        match event.kind {
            TraceEventKind::Sample(joules) => {
                self.session.add_sample(&self.probe, joules)?;
                self.pushed += joules;
                self.samples += 1;
            }
            TraceEventKind::Activate => self.session.activate_probe(&mut self.probe)?,
            TraceEventKind::Deactivate => self.session.deactivate_probe(&mut self.probe)?,
        }
        Ok(())
    }

    /// Delete the probe and report what was pushed.
    pub fn finish(self) -> Result<ProviderSummary, ProviderError> {
        let summary = ProviderSummary { pushed_joules: self.pushed, samples: self.samples };
        self.session.delete_probe(self.probe)?;
        Ok(summary)
    }

    /// Abandon the replay after an error, still trying to delete the probe.
    fn abort(self) {
        let _ = self.session.delete_probe(self.probe);
    }
}

/// Register a probe, replay a trace against it, delete the probe at EOF.
pub fn run_trace_provider(
    session: &mut Session,
    events: &[TraceEvent],
    devices: &[Device],
    speed: ReplaySpeed,
) -> Result<ProviderSummary, ProviderError> {
    let mut replay = TraceReplay::begin(session, devices)?;
    let start = Instant::now();
    for event in events {
        if let ReplaySpeed::RealTime(mult) = speed {
            let due = Duration::from_secs_f64(event.at_ms as f64 / 1000.0 / mult.max(1e-9));
            let elapsed = start.elapsed();
            if due > elapsed {
                std::thread::sleep(due - elapsed);
            }
        }
        if let Err(e) = replay.apply(event) {
            replay.abort();
            return Err(e);
        }
    }
    replay.finish()
}

/// Push a constant power as fixed per-tick Joule samples.
///
/// Ticks follow an absolute schedule (k/hz after start), so the pushed total
/// tracks `watts x duration` to within one tick even if individual sleeps
/// jitter.
pub fn run_constant_power_provider(
    session: &mut Session,
    watts: f64,
    hz: f64,
    devices: &[Device],
    duration_s: Option<f64>,
) -> Result<ProviderSummary, ProviderError> {
    if !watts.is_finite() || watts < 0.0 {
        return Err(ProviderError::Usage(format!("watts must be finite and >= 0, got {watts}")));
    }
    if !hz.is_finite() || hz <= 0.0 {
        return Err(ProviderError::Usage(format!("hz must be > 0, got {hz}")));
    }
    let tick_joules = watts / hz;
    let mut probe = session.create_probe(devices)?;
    let result = (|| {
        session.activate_probe(&mut probe)?;
        let start = Instant::now();
        let mut pushed = 0.0;
        let mut samples = 0u64;
        let mut tick = 1u64;
        loop {
            let due_s = tick as f64 / hz;
            if let Some(limit) = duration_s {
                if due_s > limit + 1e-9 {
                    break;
                }
            }
            let due = Duration::from_secs_f64(due_s);
            let elapsed = start.elapsed();
            if due > elapsed {
                std::thread::sleep(due - elapsed);
            }
            session.add_sample(&probe, tick_joules)?;
            pushed += tick_joules;
            samples += 1;
            tick += 1;
        }
        Ok(ProviderSummary { pushed_joules: pushed, samples })
    })();
    match result {
        Ok(summary) => {
            session.delete_probe(probe)?;
            Ok(summary)
        }
        Err(e) => {
            let _ = session.delete_probe(probe);
            Err(e)
        }
    }
}

fn read_charge_mah(path: &Path) -> Option<f64> {
    let text = std::fs::read_to_string(path).ok()?;
    let value: f64 = text.trim().parse().ok()?;
    value.is_finite().then_some(value)
}

/// Poll a battery charge file and push discharge energy.
///
/// The probe registers for the given devices, activates on the first good
/// reading, deactivates while charging or unreadable, and is deleted after
/// `max_polls` (run forever when `None`) or after ten consecutive failures.
pub fn run_battery_file_provider(
    session: &mut Session,
    charge_file: &Path,
    voltage: f64,
    poll_hz: f64,
    devices: &[Device],
    max_polls: Option<u64>,
) -> Result<ProviderSummary, ProviderError> {
    if !voltage.is_finite() || voltage <= 0.0 {
        return Err(ProviderError::Usage(format!("voltage must be > 0, got {voltage}")));
    }
    if !poll_hz.is_finite() || poll_hz <= 0.0 {
        return Err(ProviderError::Usage(format!("poll rate must be > 0, got {poll_hz}")));
    }
    let mut probe = session.create_probe(devices)?;
    let mut tracker = BatteryTracker::new(voltage);
    let start = Instant::now();
    let mut pushed = 0.0;
    let mut samples = 0u64;
    let mut poll = 0u64;
    loop {
        if let Some(limit) = max_polls {
            if poll >= limit {
                session.delete_probe(probe)?;
                return Ok(ProviderSummary { pushed_joules: pushed, samples });
            }
        }
        let due = Duration::from_secs_f64(poll as f64 / poll_hz);
        let elapsed = start.elapsed();
        if due > elapsed {
            std::thread::sleep(due - elapsed);
        }
        poll += 1;
        for action in tracker.observe(read_charge_mah(charge_file)) {
            let step = match action {
                BatteryAction::Activate => session.activate_probe(&mut probe),
                BatteryAction::Deactivate => session.deactivate_probe(&mut probe),
                BatteryAction::Push(joules) => {
                    let r = session.add_sample(&probe, joules);
                    if r.is_ok() {
                        pushed += joules;
                        samples += 1;
                    }
                    r
                }
                BatteryAction::GiveUp => {
                    let _ = session.delete_probe(probe);
                    return Err(ProviderError::Io(std::io::Error::other(format!(
                        "giving up after repeated failures reading {}",
                        charge_file.display()
                    ))));
                }
            };
            if let Err(code) = step {
                let _ = session.delete_probe(probe);
                return Err(code.into());
            }
        }
    }
}
