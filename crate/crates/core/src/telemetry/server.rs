use thiserror::Error;

use super::event::{replay, Event, EventKind, EventLog, LogError, ServerStatus};
use crate::controller::{
    Controller, ControllerError, ControllerMode, ControllerState, Decision, Phase, PumpCommand,
    StepOutput,
};
use crate::rulebase::{PumpDuty, ReadingError, SensorReading};

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("invalid reading: {0}")]
    InvalidReading(#[from] ReadingError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Log(#[from] LogError),
}

/// What one command produced.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Outcome {
    pub events: Vec<Event>,
    /// Fresh status for subscribers; set for every accepted reading, override
    /// or mode change, and for ticks that changed something.
    pub broadcast: Option<ServerStatus>,
}

/// Hosted controller plus its event log. All mutations go through the
/// `handle_*` methods, which append events and fold them into the status, so
/// the status is by construction the replay of the log.
#[derive(Debug, Clone)]
pub struct ServerState {
    controller: Controller,
    state: ControllerState,
    log: EventLog,
    status: ServerStatus,
}

impl ServerState {
    /// Fresh server; the initial mode is recorded as the first event.
    pub fn new(
        controller: Controller,
        mode: ControllerMode,
        now_ms: u64,
    ) -> Result<Self, TelemetryError> {
        controller.check_mode(mode)?;
        let mut server = Self {
            controller,
            state: ControllerState::new(mode),
            log: EventLog::new(),
            status: ServerStatus::default(),
        };
        server.state.clock_ms = Some(now_ms);
        server.record(now_ms, EventKind::ModeChanged { mode });
        Ok(server)
    }

    /// Rebuilds a server from a persisted log. The controller resumes exactly
    /// where the log left off, including a running pump cycle.
    pub fn restore(controller: Controller, events: Vec<Event>) -> Result<Self, TelemetryError> {
        let status = replay(&events)?;
        controller.check_mode(status.mode)?;
        let state = controller_state_from(&status);
        Ok(Self {
            controller,
            state,
            log: EventLog::from_events(events)?,
            status,
        })
    }

    pub fn status(&self) -> &ServerStatus {
        &self.status
    }

    pub fn controller_state(&self) -> &ControllerState {
        &self.state
    }

    pub fn controller(&self) -> &Controller {
        &self.controller
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn next_deadline_ms(&self) -> Option<u64> {
        self.state.deadline_ms()
    }

    pub fn handle_reading(
        &mut self,
        reading: SensorReading,
        now_ms: u64,
    ) -> Result<Outcome, TelemetryError> {
        reading.validate()?;
        let now_ms = self.clamp(now_ms);
        // Validation above covers everything `step` can reject for a reading
        // at a non-regressing time, so nothing below fails after events exist.
        let (after_tick, tick_out) = self.controller.step(&self.state, now_ms, None)?;
        let (next, out) = self.controller.step(&after_tick, now_ms, Some(&reading))?;

        let start = self.log.len();
        self.record_commands(now_ms, &tick_out.commands);
        self.record(now_ms, EventKind::ReadingRecorded { reading });
        self.record_step(now_ms, next.mode, &out);
        self.state = next;
        Ok(self.outcome(start, true))
    }

    pub fn handle_override(&mut self, duty: PumpDuty, source: &str, now_ms: u64) -> Outcome {
        let now_ms = self.clamp(now_ms);
        let start = self.log.len();
        let (ticked, tick_out) = self
            .controller
            .step(&self.state, now_ms, None)
            .expect("time is clamped and no reading is evaluated");
        self.record_commands(now_ms, &tick_out.commands);
        self.record(
            now_ms,
            EventKind::OverrideReceived {
                duty,
                source: source.to_string(),
            },
        );
        let (next, out) = self.controller.apply_override(&ticked, duty, now_ms);
        self.record_step(now_ms, next.mode, &out);
        self.state = next;
        self.outcome(start, true)
    }

    /// Switches between `auto` and `rule` (or any manual duty). Does not touch
    /// a running cycle.
    pub fn handle_mode(
        &mut self,
        mode: ControllerMode,
        now_ms: u64,
    ) -> Result<Outcome, TelemetryError> {
        if let ControllerMode::Manual(duty) = mode {
            return Ok(self.handle_override(duty, "mode", now_ms));
        }
        self.controller.check_mode(mode)?;
        let now_ms = self.clamp(now_ms);
        let start = self.log.len();
        let (ticked, tick_out) = self
            .controller
            .step(&self.state, now_ms, None)
            .expect("time is clamped and no reading is evaluated");
        self.record_commands(now_ms, &tick_out.commands);
        self.record(now_ms, EventKind::ModeChanged { mode });
        self.state = ticked.with_mode(mode);
        Ok(self.outcome(start, true))
    }

    /// Advances the clock without a reading; ends pump cycles that are due.
    pub fn tick(&mut self, now_ms: u64) -> Outcome {
        let now_ms = self.clamp(now_ms);
        let (next, out) = self
            .controller
            .step(&self.state, now_ms, None)
            .expect("time is clamped and no reading is evaluated");
        let start = self.log.len();
        self.record_commands(now_ms, &out.commands);
        self.state = next;
        let changed = self.log.len() > start;
        self.outcome(start, changed)
    }

    fn clamp(&self, now_ms: u64) -> u64 {
        self.state.clock_ms.map_or(now_ms, |c| c.max(now_ms))
    }

    fn record(&mut self, at_ms: u64, kind: EventKind) {
        let event = self.log.append(at_ms, kind);
        self.status.apply(event);
    }

    fn record_commands(&mut self, at_ms: u64, commands: &[PumpCommand]) {
        for cmd in commands {
            let on = *cmd == PumpCommand::On;
            self.record(at_ms, EventKind::PumpStateChanged { on });
        }
    }

    fn record_step(&mut self, at_ms: u64, mode: ControllerMode, out: &StepOutput) {
        if let Some(Decision { duty, on_time_ms }) = out.decision {
            self.record(
                at_ms,
                EventKind::DecisionMade {
                    duty,
                    on_time_ms,
                    mode,
                },
            );
        }
        self.record_commands(at_ms, &out.commands);
    }

    fn outcome(&self, start: usize, broadcast: bool) -> Outcome {
        Outcome {
            events: self.log.events()[start..].to_vec(),
            broadcast: broadcast.then(|| self.status.clone()),
        }
    }
}

/// Controller state implied by a status snapshot.
pub fn controller_state_from(status: &ServerStatus) -> ControllerState {
    let phase = match status.pump_deadline_ms {
        Some(deadline) if status.pump_on && deadline > status.as_of_ms => Phase::Pumping {
            remaining_ms: deadline - status.as_of_ms,
        },
        // a cycle that was due exactly at the last event still owes its stop
        Some(_) if status.pump_on => Phase::Pumping { remaining_ms: 0 },
        _ => Phase::Idle,
    };
    ControllerState {
        phase,
        mode: status.mode,
        last_pump_stop_ms: status.last_pump_stop_ms,
        last_decision: status.last_decision.map(|d| Decision {
            duty: d.duty,
            on_time_ms: d.on_time_ms,
        }),
        clock_ms: (status.event_count > 0).then_some(status.as_of_ms),
    }
}
