use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{ControllerMode, Phase};
use crate::rulebase::{PumpDuty, SensorReading};

/// One entry of the append-only log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub at_ms: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    ReadingRecorded {
        reading: SensorReading,
    },
    DecisionMade {
        duty: PumpDuty,
        on_time_ms: u64,
        mode: ControllerMode,
    },
    PumpStateChanged {
        on: bool,
    },
    OverrideReceived {
        duty: PumpDuty,
        source: String,
    },
    ModeChanged {
        mode: ControllerMode,
    },
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("sequence gap: expected {expected}, found {found}")]
    SequenceGap { expected: u64, found: u64 },
    #[error("event {seq}: pump switched {} twice in a row", if *.on { "on" } else { "off" })]
    PumpNotAlternating { seq: u64, on: bool },
    #[error("event {seq}: timestamp {at_ms} precedes {previous_ms}")]
    TimeRegression {
        seq: u64,
        at_ms: u64,
        previous_ms: u64,
    },
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Snapshot of everything the operator sees, reduced from the event log.
///
/// Pump timing is stored as an absolute deadline; `remaining_ms` is the time
/// left as of the last applied event.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ServerStatus {
    pub latest_reading: Option<SensorReading>,
    pub phase: Phase,
    pub mode: ControllerMode,
    pub pump_on: bool,
    pub remaining_ms: u64,
    pub pump_deadline_ms: Option<u64>,
    pub last_pump_stop_ms: Option<u64>,
    pub last_decision: Option<DecisionRecord>,
    pub event_count: u64,
    pub as_of_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub duty: PumpDuty,
    pub on_time_ms: u64,
    pub mode: ControllerMode,
}

impl ServerStatus {
    /// Folds one event in. The caller is responsible for sequence checks.
    pub fn apply(&mut self, event: &Event) {
        let at = event.at_ms;
        match &event.kind {
            EventKind::ReadingRecorded { reading } => self.latest_reading = Some(*reading),
            EventKind::DecisionMade {
                duty,
                on_time_ms,
                mode,
            } => {
                self.last_decision = Some(DecisionRecord {
                    duty: *duty,
                    on_time_ms: *on_time_ms,
                    mode: *mode,
                });
                // an override can retarget a running cycle
                if self.pump_on && *on_time_ms > 0 {
                    self.pump_deadline_ms = Some(at + on_time_ms);
                }
            }
            EventKind::PumpStateChanged { on: true } => {
                self.pump_on = true;
                let on_time = self.last_decision.map_or(0, |d| d.on_time_ms);
                self.pump_deadline_ms = Some(at + on_time);
            }
            EventKind::PumpStateChanged { on: false } => {
                self.pump_on = false;
                self.pump_deadline_ms = None;
                self.last_pump_stop_ms = Some(at);
            }
            EventKind::OverrideReceived { duty, .. } => self.mode = ControllerMode::Manual(*duty),
            EventKind::ModeChanged { mode } => self.mode = *mode,
        }
        self.event_count += 1;
        self.as_of_ms = at;
        self.remaining_ms = self
            .pump_deadline_ms
            .map_or(0, |deadline| deadline.saturating_sub(at));
        self.phase = if self.pump_on {
            Phase::Pumping {
                remaining_ms: self.remaining_ms,
            }
        } else {
            Phase::Idle
        };
    }
}

/// Rebuilds the status from a log, checking sequence and pump invariants.
pub fn replay<'a>(events: impl IntoIterator<Item = &'a Event>) -> Result<ServerStatus, LogError> {
    let mut status = ServerStatus::default();
    for event in events {
        check_next(&status, event)?;
        status.apply(event);
    }
    Ok(status)
}

fn check_next(status: &ServerStatus, event: &Event) -> Result<(), LogError> {
    let expected = status.event_count + 1;
    if event.seq != expected {
        return Err(LogError::SequenceGap {
            expected,
            found: event.seq,
        });
    }
    if status.event_count > 0 && event.at_ms < status.as_of_ms {
        return Err(LogError::TimeRegression {
            seq: event.seq,
            at_ms: event.at_ms,
            previous_ms: status.as_of_ms,
        });
    }
    if let EventKind::PumpStateChanged { on } = event.kind {
        if on == status.pump_on {
            return Err(LogError::PumpNotAlternating { seq: event.seq, on });
        }
    }
    Ok(())
}

/// Append-only, sequence-numbered event log starting at `seq = 1`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    events: Vec<Event>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adopts existing events after validating them.
    pub fn from_events(events: Vec<Event>) -> Result<Self, LogError> {
        replay(&events)?;
        Ok(Self { events })
    }

    pub fn next_seq(&self) -> u64 {
        self.events.len() as u64 + 1
    }

    pub fn append(&mut self, at_ms: u64, kind: EventKind) -> &Event {
        let seq = self.next_seq();
        self.events.push(Event { seq, at_ms, kind });
        self.events.last().expect("just pushed")
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    /// Events with `seq >= from`.
    pub fn since(&self, from: u64) -> &[Event] {
        let start = from.saturating_sub(1).min(self.events.len() as u64) as usize;
        &self.events[start..]
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }
}

pub fn event_to_line(event: &Event) -> String {
    serde_json::to_string(event).expect("events always serialize")
}

pub fn write_ndjson<'a, W: Write>(
    mut out: W,
    events: impl IntoIterator<Item = &'a Event>,
) -> io::Result<()> {
    for event in events {
        out.write_all(event_to_line(event).as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn to_ndjson<'a>(events: impl IntoIterator<Item = &'a Event>) -> String {
    let mut buf = Vec::new();
    write_ndjson(&mut buf, events).expect("writing to memory");
    String::from_utf8(buf).expect("json is utf-8")
}

/// Parses an NDJSON log, skipping blank lines. Does not validate sequencing.
pub fn read_ndjson<R: BufRead>(input: R) -> Result<Vec<Event>, LogError> {
    let mut events = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event = serde_json::from_str(&line).map_err(|source| LogError::Parse {
            line: i + 1,
            source,
        })?;
        events.push(event);
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reading() -> SensorReading {
        SensorReading::new(20.0, 30.0, 5.0, 1_700_000_000_000).unwrap()
    }

    fn sample_log() -> EventLog {
        let mut log = EventLog::new();
        log.append(
            0,
            EventKind::ModeChanged {
                mode: ControllerMode::RuleOnly,
            },
        );
        log.append(1_000, EventKind::ReadingRecorded { reading: reading() });
        log.append(
            1_000,
            EventKind::DecisionMade {
                duty: PumpDuty::Full,
                on_time_ms: 10_000,
                mode: ControllerMode::RuleOnly,
            },
        );
        log.append(1_000, EventKind::PumpStateChanged { on: true });
        log
    }

    #[test]
    fn empty_replay_is_initial_status() {
        assert_eq!(replay(&[]).unwrap(), ServerStatus::default());
    }

    #[test]
    fn replay_tracks_pump_and_deadline() {
        let mut log = sample_log();
        let s = replay(log.events()).unwrap();
        assert!(s.pump_on);
        assert_eq!(s.pump_deadline_ms, Some(11_000));
        assert_eq!(
            s.phase,
            Phase::Pumping {
                remaining_ms: 10_000
            }
        );
        assert_eq!(s.event_count, 4);
        assert_eq!(s.latest_reading, Some(reading()));

        log.append(
            4_000,
            EventKind::OverrideReceived {
                duty: PumpDuty::Off,
                source: "test".into(),
            },
        );
        log.append(
            4_000,
            EventKind::DecisionMade {
                duty: PumpDuty::Off,
                on_time_ms: 0,
                mode: ControllerMode::Manual(PumpDuty::Off),
            },
        );
        let s = replay(log.events()).unwrap();
        assert_eq!(s.remaining_ms, 7_000);
        log.append(4_000, EventKind::PumpStateChanged { on: false });
        let s = replay(log.events()).unwrap();
        assert_eq!(s.mode, ControllerMode::Manual(PumpDuty::Off));
        assert_eq!(s.phase, Phase::Idle);
        assert_eq!(s.last_pump_stop_ms, Some(4_000));
        // purity
        assert_eq!(replay(log.events()).unwrap(), s);
    }

    #[test]
    fn gaps_and_broken_alternation_detected() {
        let mut events = sample_log().into_events();
        events.remove(1);
        assert!(matches!(
            replay(&events),
            Err(LogError::SequenceGap {
                expected: 2,
                found: 3
            })
        ));

        let mut log = sample_log();
        log.append(2_000, EventKind::PumpStateChanged { on: true });
        assert!(matches!(
            EventLog::from_events(log.into_events()),
            Err(LogError::PumpNotAlternating { seq: 5, on: true })
        ));

        let mut log = sample_log();
        log.append(10, EventKind::PumpStateChanged { on: false });
        assert!(matches!(
            replay(log.events()),
            Err(LogError::TimeRegression { .. })
        ));
    }

    #[test]
    fn ndjson_round_trip() {
        let log = sample_log();
        let text = to_ndjson(log.events());
        assert_eq!(text.lines().count(), 4);
        assert!(text
            .lines()
            .nth(1)
            .unwrap()
            .contains(r#""event":"reading_recorded""#));
        let back = read_ndjson(text.as_bytes()).unwrap();
        assert_eq!(back, log.events());
        let err = read_ndjson("{\"seq\":1}\n".as_bytes()).unwrap_err();
        assert!(matches!(err, LogError::Parse { line: 1, .. }));
    }

    #[test]
    fn since_slices_by_sequence() {
        let log = sample_log();
        assert_eq!(log.since(0).len(), 4);
        assert_eq!(log.since(1).len(), 4);
        assert_eq!(log.since(3)[0].seq, 3);
        assert!(log.since(99).is_empty());
    }
}
