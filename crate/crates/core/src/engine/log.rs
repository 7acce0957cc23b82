//! Run event log. One tab-separated line per event:
//! `timestamp_us worker plugin_index plugin_name phase frames duration_us`,
//! timestamps in microseconds since the start of the run.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Load,
    Setup,
    Pre,
    Process,
    Write,
    Post,
}

impl Phase {
    pub const ALL: [Phase; 6] = [Phase::Load, Phase::Setup, Phase::Pre, Phase::Process, Phase::Write, Phase::Post];

    /// Position in a plugin's lifecycle. The per-batch phases share a rank
    /// because they repeat.
    pub fn rank(self) -> u8 {
        match self {
            Phase::Setup => 0,
            Phase::Pre => 1,
            Phase::Load | Phase::Process | Phase::Write => 2,
            Phase::Post => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Load => "load",
            Phase::Setup => "setup",
            Phase::Pre => "pre",
            Phase::Process => "process",
            Phase::Write => "write",
            Phase::Post => "post",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Phase::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown phase '{s}'"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEvent {
    pub timestamp_us: u64,
    pub worker: usize,
    pub plugin_index: usize,
    pub plugin_name: String,
    pub phase: Phase,
    pub frames: usize,
    pub duration_us: u64,
}

impl LogEvent {
    pub fn end_us(&self) -> u64 {
        self.timestamp_us + self.duration_us
    }

    fn sort_key(&self) -> (u64, usize, u8, usize) {
        (self.timestamp_us, self.plugin_index, self.phase.rank(), self.worker)
    }
}

impl fmt::Display for LogEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            self.timestamp_us, self.worker, self.plugin_index, self.plugin_name, self.phase, self.frames, self.duration_us
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct LogError {
    pub line: usize,
    pub message: String,
}

impl FromStr for LogEvent {
    type Err = String;

    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 7 {
            return Err(format!("expected 7 tab-separated fields, found {}", fields.len()));
        }
        fn num<N: FromStr>(what: &str, s: &str) -> Result<N, String> {
            s.trim().parse().map_err(|_| format!("bad {what} '{s}'"))
        }
        Ok(LogEvent {
            timestamp_us: num("timestamp", fields[0])?,
            worker: num("worker", fields[1])?,
            plugin_index: num("plugin index", fields[2])?,
            plugin_name: fields[3].to_string(),
            phase: fields[4].trim().parse()?,
            frames: num("frame count", fields[5])?,
            duration_us: num("duration", fields[6])?,
        })
    }
}

/// Parses a log and checks lifecycle ordering. Blank lines are skipped;
/// error line numbers are 1-based.
pub fn parse_log(text: &str) -> Result<Vec<LogEvent>, LogError> {
    let mut events = Vec::new();
    let mut lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let event: LogEvent = raw.parse().map_err(|message| LogError { line: i + 1, message })?;
        events.push(event);
        lines.push(i + 1);
    }
    check_lifecycle(&events).map_err(|(k, message)| LogError { line: lines[k], message })?;
    Ok(events)
}

/// Checks that, per worker and plugin, phases never go backwards and that
/// each plugin's single `post` comes after all of its batch events.
/// Returns the position of the first offending event.
pub fn check_lifecycle(events: &[LogEvent]) -> Result<(), (usize, String)> {
    let mut rank: BTreeMap<(usize, usize), Phase> = BTreeMap::new();
    let mut posted: BTreeSet<usize> = BTreeSet::new();
    for (k, e) in events.iter().enumerate() {
        if posted.contains(&e.plugin_index) {
            let message = if e.phase == Phase::Post {
                format!("second post for plugin {} ({})", e.plugin_index, e.plugin_name)
            } else {
                format!("{} for plugin {} ({}) after its post", e.phase, e.plugin_index, e.plugin_name)
            };
            return Err((k, message));
        }
        let key = (e.worker, e.plugin_index);
        if let Some(prev) = rank.get(&key) {
            if e.phase.rank() < prev.rank() {
                return Err((
                    k,
                    format!(
                        "{} after {} for worker {} in plugin {} ({})",
                        e.phase, prev, e.worker, e.plugin_index, e.plugin_name
                    ),
                ));
            }
        }
        rank.insert(key, e.phase);
        if e.phase == Phase::Post {
            posted.insert(e.plugin_index);
        }
    }
    Ok(())
}

/// Thread-safe event sink timed from its creation.
#[derive(Debug)]
pub struct EventLog {
    start: Instant,
    events: Mutex<Vec<LogEvent>>,
}

impl Default for EventLog {
    fn default() -> Self {
        Self::new()
    }
}

impl EventLog {
    pub fn new() -> Self {
        EventLog { start: Instant::now(), events: Mutex::new(Vec::new()) }
    }

    pub fn record(&self, worker: usize, plugin_index: usize, plugin_name: &str, phase: Phase, frames: usize, began: Instant) {
        let end = Instant::now();
        let timestamp_us = began.saturating_duration_since(self.start).as_micros() as u64;
        let duration_us = end.saturating_duration_since(began).as_micros() as u64;
        let event = LogEvent {
            timestamp_us,
            worker,
            plugin_index,
            plugin_name: plugin_name.to_string(),
            phase,
            frames,
            duration_us,
        };
        self.events.lock().expect("event log poisoned").push(event);
    }

    /// Events ordered by start time.
    pub fn events(&self) -> Vec<LogEvent> {
        let mut events = self.events.lock().expect("event log poisoned").clone();
        events.sort_by_key(LogEvent::sort_key);
        events
    }

    pub fn render(&self) -> String {
        self.events().iter().map(|e| format!("{e}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(t: u64, w: usize, p: usize, phase: Phase) -> LogEvent {
        LogEvent { timestamp_us: t, worker: w, plugin_index: p, plugin_name: "X".into(), phase, frames: 1, duration_us: 1 }
    }

    #[test]
    fn round_trip_line() {
        let e = ev(12, 3, 2, Phase::Write);
        assert_eq!(e.to_string(), "12\t3\t2\tX\twrite\t1\t1");
        assert_eq!(e.to_string().parse::<LogEvent>().unwrap(), e);
        assert!("1\t2\t3".parse::<LogEvent>().is_err());
        assert!("1\t2\t3\tX\tnap\t1\t1".parse::<LogEvent>().is_err());
        assert!("-1\t2\t3\tX\tpre\t1\t1".parse::<LogEvent>().is_err());
    }

    #[test]
    fn lifecycle_checks() {
        let good = [
            ev(0, 0, 2, Phase::Setup),
            ev(1, 0, 2, Phase::Pre),
            ev(2, 0, 2, Phase::Load),
            ev(2, 1, 2, Phase::Load),
            ev(3, 1, 2, Phase::Process),
            ev(4, 0, 2, Phase::Write),
            ev(9, 0, 2, Phase::Post),
        ];
        assert!(check_lifecycle(&good).is_ok());
        let text: String = good.iter().map(|e| format!("{e}\n")).collect();
        assert_eq!(parse_log(&format!("\n{text}")).unwrap().len(), 7);

        let mut bad = good.to_vec();
        bad.swap(0, 1);
        assert_eq!(check_lifecycle(&bad).unwrap_err().0, 1);
        let mut late = good.to_vec();
        late.push(ev(10, 1, 2, Phase::Write));
        assert_eq!(check_lifecycle(&late).unwrap_err().0, 7);
        let text: String = late.iter().map(|e| format!("{e}\n")).collect();
        assert_eq!(parse_log(&text).unwrap_err().line, 8);
    }

    #[test]
    fn sink_orders_by_time() {
        let log = EventLog::new();
        let t = Instant::now();
        log.record(1, 1, "A", Phase::Process, 2, t);
        log.record(0, 1, "A", Phase::Load, 2, t);
        let events = log.events();
        assert_eq!(events.len(), 2);
        assert!(events[0].timestamp_us <= events[1].timestamp_us);
        assert!(log.render().lines().count() == 2);
    }
}
