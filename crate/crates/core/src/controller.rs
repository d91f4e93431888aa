//! Sense → decide → pump cycle as a pure state machine.
//!
//! The controller never touches hardware. Each call takes the previous state and
//! returns the next one together with the pump commands the host must carry
//! out. While the pump runs, the decision that started it is frozen; new
//! readings are only considered once the cycle has finished and the restart gap
//! has elapsed.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mlp::{MlpError, Model};
use crate::rulebase::{classify, PumpDuty, ReadingError, SensorReading};

/// Serialized as `"auto"`, `"rule"` or `"manual:<duty>"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum ControllerMode {
    /// The trained network decides.
    Auto,
    /// The rule table decides.
    #[default]
    RuleOnly,
    /// Operator-fixed duty.
    Manual(PumpDuty),
}

impl fmt::Display for ControllerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControllerMode::Auto => f.write_str("auto"),
            ControllerMode::RuleOnly => f.write_str("rule"),
            ControllerMode::Manual(d) => write!(f, "manual:{d}"),
        }
    }
}

impl From<ControllerMode> for String {
    fn from(mode: ControllerMode) -> Self {
        mode.to_string()
    }
}

impl TryFrom<String> for ControllerMode {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl FromStr for ControllerMode {
    type Err = String;

    /// Accepts `auto`, `rule` and `manual:<duty>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "auto" => Ok(ControllerMode::Auto),
            "rule" | "rule-only" | "ruleonly" => Ok(ControllerMode::RuleOnly),
            other => match other.strip_prefix("manual:") {
                Some(duty) => duty.parse().map(ControllerMode::Manual),
                None => Err(format!(
                    "unknown mode `{s}` (expected auto, rule or manual:<duty>)"
                )),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleConfig {
    /// Length of one irrigation cycle; a `Full` decision pumps for all of it.
    pub period_s: f64,
    /// How often the host samples the sensors.
    pub poll_interval_s: f64,
    /// Minimum pause between a pump stop and the next automatic start.
    pub min_restart_gap_s: f64,
}

impl Default for CycleConfig {
    fn default() -> Self {
        Self {
            period_s: 10.0,
            poll_interval_s: 2.0,
            min_restart_gap_s: 5.0,
        }
    }
}

impl CycleConfig {
    pub fn validate(&self) -> Result<(), ControllerError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.period_s)
            || !positive(self.poll_interval_s)
            || !positive(self.min_restart_gap_s)
        {
            return Err(ControllerError::InvalidConfig(
                "period, poll interval and restart gap must all be positive".into(),
            ));
        }
        if self.poll_interval_s > self.period_s {
            return Err(ControllerError::InvalidConfig(format!(
                "poll interval {} s exceeds period {} s",
                self.poll_interval_s, self.period_s
            )));
        }
        Ok(())
    }

    pub fn period_ms(&self) -> u64 {
        secs_to_ms(self.period_s)
    }

    pub fn poll_interval_ms(&self) -> u64 {
        secs_to_ms(self.poll_interval_s)
    }

    pub fn min_restart_gap_ms(&self) -> u64 {
        secs_to_ms(self.min_restart_gap_s)
    }

    /// Pump on-time for one cycle at `duty`, rounded to the nearest ms.
    pub fn on_time_ms(&self, duty: PumpDuty) -> u64 {
        (duty.fraction() * self.period_s * 1000.0).round() as u64
    }
}

fn secs_to_ms(s: f64) -> u64 {
    (s * 1000.0).round() as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "lowercase")]
pub enum Phase {
    #[default]
    Idle,
    Pumping {
        remaining_ms: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub duty: PumpDuty,
    pub on_time_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PumpCommand {
    On,
    Off,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ControllerState {
    pub phase: Phase,
    pub mode: ControllerMode,
    pub last_pump_stop_ms: Option<u64>,
    pub last_decision: Option<Decision>,
    /// Time of the most recent step or override.
    pub clock_ms: Option<u64>,
}

impl ControllerState {
    pub fn new(mode: ControllerMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    pub fn is_pumping(&self) -> bool {
        matches!(self.phase, Phase::Pumping { .. })
    }

    pub fn remaining_ms(&self) -> u64 {
        match self.phase {
            Phase::Idle => 0,
            Phase::Pumping { remaining_ms } => remaining_ms,
        }
    }

    /// Absolute time at which the running cycle ends. Hosts that want exact
    /// on-times should step no later than this.
    pub fn deadline_ms(&self) -> Option<u64> {
        match (self.phase, self.clock_ms) {
            (Phase::Pumping { remaining_ms }, Some(clock)) => Some(clock + remaining_ms),
            _ => None,
        }
    }

    pub fn with_mode(&self, mode: ControllerMode) -> Self {
        Self {
            mode,
            ..self.clone()
        }
    }
}

/// Everything a step produced besides the new state.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepOutput {
    /// Set when a reading was evaluated (or an override fixed the duty).
    pub decision: Option<Decision>,
    pub commands: Vec<PumpCommand>,
}

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("auto mode needs trained weights")]
    MissingWeights,
    #[error("time went backwards: {now_ms} ms after {last_ms} ms")]
    TimeRegression { last_ms: u64, now_ms: u64 },
    #[error("invalid cycle config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Reading(#[from] ReadingError),
    #[error(transparent)]
    Model(#[from] MlpError),
}

/// Duty for `reading` under `mode` and the on-time it implies.
pub fn decide(
    reading: &SensorReading,
    mode: ControllerMode,
    model: Option<&Model>,
    config: &CycleConfig,
) -> Result<Decision, ControllerError> {
    let duty = match mode {
        ControllerMode::Auto => model
            .ok_or(ControllerError::MissingWeights)?
            .predict(reading)?,
        ControllerMode::RuleOnly => classify(reading)?,
        ControllerMode::Manual(duty) => {
            reading.validate()?;
            duty
        }
    };
    Ok(Decision {
        duty,
        on_time_ms: config.on_time_ms(duty),
    })
}

/// Cycle configuration plus the decision model; the state lives outside.
#[derive(Debug, Clone, Default)]
pub struct Controller {
    pub config: CycleConfig,
    pub model: Option<Model>,
}

impl Controller {
    pub fn new(config: CycleConfig, model: Option<Model>) -> Result<Self, ControllerError> {
        config.validate()?;
        Ok(Self { config, model })
    }

    /// Fails when `mode` cannot be served by this controller.
    pub fn check_mode(&self, mode: ControllerMode) -> Result<(), ControllerError> {
        if mode == ControllerMode::Auto && self.model.is_none() {
            return Err(ControllerError::MissingWeights);
        }
        Ok(())
    }

    pub fn step(
        &self,
        state: &ControllerState,
        now_ms: u64,
        reading: Option<&SensorReading>,
    ) -> Result<(ControllerState, StepOutput), ControllerError> {
        if let Some(last_ms) = state.clock_ms {
            if now_ms < last_ms {
                return Err(ControllerError::TimeRegression { last_ms, now_ms });
            }
        }
        let (mut next, mut out) = advance(state, now_ms);

        if let (Phase::Idle, Some(reading)) = (next.phase, reading) {
            let gap_open = next
                .last_pump_stop_ms
                .is_none_or(|stop| now_ms - stop >= self.config.min_restart_gap_ms());
            if gap_open {
                let decision = decide(reading, next.mode, self.model.as_ref(), &self.config)?;
                next.last_decision = Some(decision);
                out.decision = Some(decision);
                if decision.on_time_ms > 0 {
                    next.phase = Phase::Pumping {
                        remaining_ms: decision.on_time_ms,
                    };
                    out.commands.push(PumpCommand::On);
                }
            }
        }
        Ok((next, out))
    }

    /// Operator command: switch to `Manual(duty)` and make the pump match at
    /// once, ignoring the restart gap. A time earlier than the last step is
    /// treated as the last step's time.
    pub fn apply_override(
        &self,
        state: &ControllerState,
        duty: PumpDuty,
        now_ms: u64,
    ) -> (ControllerState, StepOutput) {
        let now_ms = state.clock_ms.map_or(now_ms, |c| c.max(now_ms));
        let (mut next, mut out) = advance(state, now_ms);
        let decision = Decision {
            duty,
            on_time_ms: self.config.on_time_ms(duty),
        };
        next.mode = ControllerMode::Manual(duty);
        next.last_decision = Some(decision);
        out.decision = Some(decision);

        match (next.phase, decision.on_time_ms > 0) {
            (Phase::Pumping { .. }, true) => {
                next.phase = Phase::Pumping {
                    remaining_ms: decision.on_time_ms,
                };
            }
            (Phase::Pumping { .. }, false) => {
                next.phase = Phase::Idle;
                next.last_pump_stop_ms = Some(now_ms);
                out.commands.push(PumpCommand::Off);
            }
            (Phase::Idle, true) => {
                next.phase = Phase::Pumping {
                    remaining_ms: decision.on_time_ms,
                };
                out.commands.push(PumpCommand::On);
            }
            (Phase::Idle, false) => {}
        }
        (next, out)
    }
}

/// Moves the clock to `now_ms`, counting down a running cycle.
fn advance(state: &ControllerState, now_ms: u64) -> (ControllerState, StepOutput) {
    let mut next = state.clone();
    let mut out = StepOutput::default();
    let elapsed = state.clock_ms.map_or(0, |c| now_ms.saturating_sub(c));
    next.clock_ms = Some(now_ms);
    if let Phase::Pumping { remaining_ms } = state.phase {
        if elapsed >= remaining_ms {
            next.phase = Phase::Idle;
            next.last_pump_stop_ms = Some(now_ms);
            out.commands.push(PumpCommand::Off);
        } else {
            next.phase = Phase::Pumping {
                remaining_ms: remaining_ms - elapsed,
            };
        }
    }
    (next, out)
}
