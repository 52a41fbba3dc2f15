//! Per-process attribution shares, loaded from a trace file.
//!
//! True OS-level attribution needs kernel cooperation; here the share of a
//! device's energy assigned to a pid over time arrives as a deterministic
//! trace the daemon consults when sampling SELF checkpoints. Line format:
//!
//! ```text
//! <at_ms> <pid> <device-spec> <share>
//! ```
//!
//! `#` starts a comment. Shares are fractions in [0,1]; for any device the
//! shares of all pids in force at one time must not sum past 1.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::model::{expand_to_leaves, parse_device_spec, Device, Topology};
use crate::providers::ProviderError;

#[derive(Debug, Clone, PartialEq)]
pub struct AttributionEvent {
    pub at_ms: u64,
    pub pid: u32,
    pub device: Device,
    pub share: f64,
}

/// Parsed attribution trace, still in terms of device specs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttributionTable {
    events: Vec<AttributionEvent>,
}

impl AttributionTable {
    pub fn parse(text: &str) -> Result<AttributionTable, ProviderError> {
        let mut events: Vec<AttributionEvent> = Vec::new();
        let mut current: BTreeMap<(u32, String), f64> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let fields: Vec<&str> = body.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(ProviderError::Parse {
                    line,
                    msg: format!("expected `<at_ms> <pid> <device> <share>`, got {} fields", fields.len()),
                });
            }
            let at_ms: u64 = fields[0]
                .parse()
                .map_err(|_| ProviderError::Parse { line, msg: format!("bad time `{}`", fields[0]) })?;
            if let Some(last) = events.last() {
                if at_ms < last.at_ms {
                    return Err(ProviderError::Parse {
                        line,
                        msg: format!("time {at_ms} goes backwards (previous {})", last.at_ms),
                    });
                }
            }
            let pid: u32 = fields[1]
                .parse()
                .map_err(|_| ProviderError::Parse { line, msg: format!("bad pid `{}`", fields[1]) })?;
            let device = parse_device_spec(fields[2])
                .map_err(|e| ProviderError::Parse { line, msg: e.to_string() })?;
            let share: f64 = fields[3]
                .parse()
                .map_err(|_| ProviderError::Parse { line, msg: format!("bad share `{}`", fields[3]) })?;
            if !(0.0..=1.0).contains(&share) {
                return Err(ProviderError::Parse {
                    line,
                    msg: format!("share {share} outside [0,1]"),
                });
            }
            current.insert((pid, device.spec()), share);
            let device_total: f64 = current
                .iter()
                .filter(|((_, d), _)| *d == device.spec())
                .map(|(_, s)| s)
                .sum();
            if device_total > 1.0 + 1e-9 {
                return Err(ProviderError::Parse {
                    line,
                    msg: format!("shares for {} sum to {device_total} > 1", device.spec()),
                });
            }
            events.push(AttributionEvent { at_ms, pid, device, share });
        }
        Ok(AttributionTable { events })
    }

    pub fn load(path: &Path) -> Result<AttributionTable, ProviderError> {
        let text = std::fs::read_to_string(path)?;
        AttributionTable::parse(&text)
    }

    pub fn events(&self) -> &[AttributionEvent] {
        &self.events
    }

    /// Bind the trace to a topology so shares can be matched against
    /// checkpoint leaf sets.
    pub fn resolve(&self, topology: &Topology) -> Result<ResolvedAttribution, ProviderError> {
        let mut resolved = Vec::with_capacity(self.events.len());
        for ev in &self.events {
            let leaf_devices = expand_to_leaves(&ev.device, topology).map_err(|code| {
                ProviderError::Parse {
                    line: 0,
                    msg: format!("device {} not in topology ({code})", ev.device),
                }
            })?;
            let leaves: BTreeSet<usize> = leaf_devices
                .devices()
                .iter()
                .map(|d| topology.leaves().binary_search(d).expect("expansion is in topology"))
                .collect();
            resolved.push(ResolvedEvent { at_ms: ev.at_ms, pid: ev.pid, leaves, share: ev.share });
        }
        Ok(ResolvedAttribution { events: resolved })
    }
}

#[derive(Debug, Clone)]
struct ResolvedEvent {
    at_ms: u64,
    pid: u32,
    leaves: BTreeSet<usize>,
    share: f64,
}

/// Attribution trace with device specs expanded to topology leaf indices.
#[derive(Debug, Clone, Default)]
pub struct ResolvedAttribution {
    events: Vec<ResolvedEvent>,
}

impl ResolvedAttribution {
    /// Most recent share in force at `now_ms` for this pid whose device
    /// covers the whole requested leaf set; 0 when no entry matches.
    pub fn share_at(&self, pid: u32, request: &BTreeSet<usize>, now_ms: u64) -> f64 {
        let mut share = 0.0;
        for ev in &self.events {
            if ev.at_ms > now_ms {
                break;
            }
            if ev.pid == pid && request.is_subset(&ev.leaves) {
                share = ev.share;
            }
        }
        share
    }
}
