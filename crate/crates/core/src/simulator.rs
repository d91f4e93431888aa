//! Deterministic farm stand-in: soil-moisture dynamics, diurnal climate,
//! noisy sensors and a closed-loop runner around [`ServerState`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{Controller, ControllerMode};
use crate::rulebase::{SensorReading, TEMPERATURE_RANGE_C};
use crate::telemetry::{Event, ServerState, ServerStatus, TelemetryError};

const DAY_S: f64 = 86_400.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid plant parameters: {0}")]
    InvalidParams(String),
    #[error("duration must be positive, got {0} s")]
    InvalidDuration(f64),
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantParams {
    /// Moisture gain in %/s while the pump runs.
    pub k_infiltration: f64,
    /// Peak evapotranspiration loss in %/s.
    pub k_et: f64,
    pub dt_s: f64,
    /// Sensor noise std-dev for (temperature °C, humidity %, soil %).
    pub noise_sigma: (f64, f64, f64),
    pub seed: u64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            k_infiltration: 0.8,
            k_et: 0.05,
            dt_s: 1.0,
            noise_sigma: (0.3, 1.0, 0.5),
            seed: 0,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: &str| Err(SimError::InvalidParams(msg.into()));
        if !(self.k_infiltration > 0.0 && self.k_infiltration.is_finite()) {
            return bad("k_infiltration must be positive");
        }
        if !(self.k_et >= 0.0 && self.k_et.is_finite()) {
            return bad("k_et must be non-negative");
        }
        if !(self.dt_s > 0.0 && self.dt_s.is_finite()) || self.dt_ms() == 0 {
            return bad("dt_s must be at least 1 ms");
        }
        let (a, b, c) = self.noise_sigma;
        if ![a, b, c].iter().all(|s| *s >= 0.0 && s.is_finite()) {
            return bad("noise_sigma must be non-negative");
        }
        Ok(())
    }

    pub fn dt_ms(&self) -> u64 {
        (self.dt_s * 1000.0).round() as u64
    }
}

/// Diurnal climate; zero amplitudes give a constant climate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClimateProfile {
    pub temperature_mean_c: f64,
    pub temperature_amplitude_c: f64,
    pub humidity_mean_pct: f64,
    pub humidity_amplitude_pct: f64,
}

impl Default for ClimateProfile {
    fn default() -> Self {
        Self {
            temperature_mean_c: 25.0,
            temperature_amplitude_c: 10.0,
            humidity_mean_pct: 50.0,
            humidity_amplitude_pct: 20.0,
        }
    }
}

impl ClimateProfile {
    pub fn constant(temperature_c: f64, humidity_pct: f64) -> Self {
        Self {
            temperature_mean_c: temperature_c,
            temperature_amplitude_c: 0.0,
            humidity_mean_pct: humidity_pct,
            humidity_amplitude_pct: 0.0,
        }
    }
}

/// Temperature and humidity at `sim_time_s`. Humidity peaks when temperature
/// bottoms out.
pub fn ambient(sim_time_s: f64, profile: &ClimateProfile) -> (f64, f64) {
    let s = (std::f64::consts::TAU * sim_time_s / DAY_S).sin();
    let (t_min, t_max) = TEMPERATURE_RANGE_C;
    let t = profile.temperature_mean_c + profile.temperature_amplitude_c * s;
    let h = profile.humidity_mean_pct - profile.humidity_amplitude_pct * s;
    (t.clamp(t_min, t_max), h.clamp(0.0, 100.0))
}

#[derive(Debug, Clone)]
pub struct SimState {
    pub soil_moisture_true: f64,
    pub sim_time_ms: u64,
    pub climate: ClimateProfile,
    rng: ChaCha8Rng,
}

impl SimState {
    pub fn new(soil_moisture_pct: f64, climate: ClimateProfile, seed: u64) -> Self {
        Self {
            soil_moisture_true: soil_moisture_pct.clamp(0.0, 100.0),
            sim_time_ms: 0,
            climate,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn sim_time_s(&self) -> f64 {
        self.sim_time_ms as f64 / 1000.0
    }

    pub fn ambient(&self) -> (f64, f64) {
        ambient(self.sim_time_s(), &self.climate)
    }
}

/// One Euler step of `params.dt_s`.
pub fn step_soil(state: &SimState, pump_on: bool, params: &PlantParams) -> SimState {
    step_soil_ms(state, pump_on, params, params.dt_ms())
}

fn step_soil_ms(state: &SimState, pump_on: bool, params: &PlantParams, dt_ms: u64) -> SimState {
    let (t, h) = state.ambient();
    let inflow = if pump_on { params.k_infiltration } else { 0.0 };
    let et = params.k_et * (t / 50.0).max(0.0) * (1.0 - h / 100.0);
    let dt_s = dt_ms as f64 / 1000.0;
    let mut next = state.clone();
    next.soil_moisture_true = (state.soil_moisture_true + (inflow - et) * dt_s).clamp(0.0, 100.0);
    next.sim_time_ms += dt_ms;
    next
}

/// True state plus Gaussian noise, clamped to the sensor ranges. Always draws
/// three samples so the stream does not depend on the sigmas.
pub fn read_sensors(state: &mut SimState, params: &PlantParams) -> SensorReading {
    let (t, h) = state.ambient();
    let (st, sh, sm) = params.noise_sigma;
    let mut noisy = |mean: f64, sigma: f64| {
        let n = Normal::new(0.0, 1.0).expect("unit normal");
        mean + sigma * n.sample(&mut state.rng)
    };
    let t = noisy(t, st);
    let h = noisy(h, sh);
    let m = noisy(state.soil_moisture_true, sm);
    let (t_min, t_max) = TEMPERATURE_RANGE_C;
    SensorReading {
        temperature_c: t.clamp(t_min, t_max),
        humidity_pct: h.clamp(0.0, 100.0),
        soil_moisture_pct: m.clamp(0.0, 100.0),
        timestamp_ms: state.sim_time_ms,
    }
}

/// Plant state at one integration point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub time_ms: u64,
    pub soil_moisture_pct: f64,
    pub pump_on: bool,
}

#[derive(Debug, Clone)]
pub struct ClosedLoopRun {
    pub events: Vec<Event>,
    /// Live status at the end of the run.
    pub status: ServerStatus,
    pub trace: Vec<TracePoint>,
    pub final_state: SimState,
}

/// Runs plant and controller together for `duration_s`.
///
/// Readings are taken every poll interval; between polls the controller is
/// only ticked. Integration steps are split at pump deadlines so each cycle
/// runs for exactly its on-time.
pub fn run_closed_loop(
    initial: SimState,
    params: &PlantParams,
    controller: Controller,
    mode: ControllerMode,
    duration_s: f64,
) -> Result<ClosedLoopRun, SimError> {
    params.validate()?;
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(SimError::InvalidDuration(duration_s));
    }
    let poll_ms = controller.config.poll_interval_ms();
    let end_ms = initial.sim_time_ms + (duration_s * 1000.0).round() as u64;
    let mut server = ServerState::new(controller, mode, initial.sim_time_ms)?;
    let mut state = initial;
    let mut next_poll = state.sim_time_ms;
    let mut next_step = state.sim_time_ms;
    let mut trace = Vec::new();

    loop {
        let now = state.sim_time_ms;
        if now == next_poll {
            let reading = read_sensors(&mut state, params);
            server.handle_reading(reading, now)?;
            next_poll += poll_ms;
        } else {
            server.tick(now);
        }
        if now == next_step {
            next_step += params.dt_ms();
        }
        let pump_on = server.controller_state().is_pumping();
        trace.push(TracePoint {
            time_ms: now,
            soil_moisture_pct: state.soil_moisture_true,
            pump_on,
        });
        if now >= end_ms {
            break;
        }
        let mut until = next_step.min(next_poll).min(end_ms);
        if let Some(deadline) = server.next_deadline_ms() {
            until = until.min(deadline.max(now + 1));
        }
        state = step_soil_ms(&state, pump_on, params, until - now);
    }

    Ok(ClosedLoopRun {
        events: server.log().events().to_vec(),
        status: server.status().clone(),
        trace,
        final_state: state,
    })
}
