//! Energy trace files: a scripted schedule of samples and capability
//! changes, replayable against the daemon for deterministic tests.
//!
//! Line format, one event per line, `#` comments:
//!
//! ```text
//! <at_ms> SAMPLE <joules>
//! <at_ms> ACTIVATE
//! <at_ms> DEACTIVATE
//! ```

use std::path::Path;

use crate::providers::ProviderError;

#[derive(Debug, Clone, PartialEq)]
pub enum TraceEventKind {
    Sample(f64),
    Activate,
    Deactivate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    /// Offset from trace start, non-decreasing within a file.
    pub at_ms: u64,
    pub kind: TraceEventKind,
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceEvent>, ProviderError> {
    let mut events: Vec<TraceEvent> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut fields = body.split_whitespace();
        let at_ms: u64 = fields
            .next()
            .unwrap()
            .parse()
            .map_err(|_| ProviderError::Parse { line, msg: "bad timestamp".into() })?;
        if let Some(prev) = events.last() {
            if at_ms < prev.at_ms {
                return Err(ProviderError::Parse {
                    line,
                    msg: format!("time {at_ms} goes backwards (previous {})", prev.at_ms),
                });
            }
        }
        let kind = match (fields.next(), fields.next(), fields.next()) {
            (Some("SAMPLE"), Some(j), None) => {
                let joules: f64 = j
                    .parse()
                    .map_err(|_| ProviderError::Parse { line, msg: format!("bad joules `{j}`") })?;
                if !joules.is_finite() || joules < 0.0 {
                    return Err(ProviderError::Parse {
                        line,
                        msg: format!("sample {joules} must be finite and >= 0"),
                    });
                }
                TraceEventKind::Sample(joules)
            }
            (Some("ACTIVATE"), None, None) => TraceEventKind::Activate,
            (Some("DEACTIVATE"), None, None) => TraceEventKind::Deactivate,
            _ => {
                return Err(ProviderError::Parse { line, msg: format!("unrecognized event `{body}`") })
            }
        };
        events.push(TraceEvent { at_ms, kind });
    }
    Ok(events)
}

pub fn load_trace(path: &Path) -> Result<Vec<TraceEvent>, ProviderError> {
    let text = std::fs::read_to_string(path)?;
    parse_trace(&text)
}

/// Sum of all SAMPLE values, in file order (the replay pushes them in the
/// same order, so a cumulative counter matches this bit for bit).
pub fn sample_sum(events: &[TraceEvent]) -> f64 {
    events
        .iter()
        .filter_map(|e| match e.kind {
            TraceEventKind::Sample(j) => Some(j),
            _ => None,
        })
        .sum()
}
