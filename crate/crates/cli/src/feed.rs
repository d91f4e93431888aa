use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use irrigation_core::simulator::{read_sensors, step_soil, PlantParams, SimState};
use irrigation_core::telemetry::{decode_message, encode_message, Message};

use crate::{CliError, FeedArgs};

/// Plays the part of a field node: reads simulated sensors, sends them to the
/// service and waters the simulated soil as the replies say.
pub(crate) fn run(args: FeedArgs) -> Result<(), CliError> {
    if !(args.duration > 0.0 && args.duration.is_finite()) {
        return Err(CliError::Usage("--duration must be positive".into()));
    }
    if !(args.poll_interval > 0.0 && args.poll_interval.is_finite()) {
        return Err(CliError::Usage("--poll-interval must be positive".into()));
    }
    let params = args.field.params();
    params
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let stream = TcpStream::connect(&args.connect)
        .map_err(|e| CliError::Runtime(format!("cannot connect to {}: {e}", args.connect)))?;
    let mut writer = stream.try_clone().map_err(CliError::runtime)?;
    let mut reader = BufReader::new(stream);

    let mut state = SimState::new(
        args.field.initial_moisture,
        args.field.climate(),
        params.seed,
    );
    let poll = Duration::from_secs_f64(args.poll_interval);
    let started = Instant::now();
    let end = started + Duration::from_secs_f64(args.duration);
    let mut next = started;
    let mut line = String::new();

    while next < end {
        std::thread::sleep(next.saturating_duration_since(Instant::now()));
        let mut reading = read_sensors(&mut state, &params);
        reading.timestamp_ms = wall_ms();
        writer
            .write_all(encode_message(&Message::Reading(reading)).as_bytes())
            .map_err(CliError::runtime)?;

        line.clear();
        if reader.read_line(&mut line).map_err(CliError::runtime)? == 0 {
            return Err(CliError::Runtime("service closed the connection".into()));
        }
        let pump_on_ms = match decode_message(line.as_bytes()) {
            Ok(Message::Status(status)) => {
                println!(
                    "soil {:5.1}%  pump {:<3}  mode {}",
                    state.soil_moisture_true,
                    if status.pump_on { "on" } else { "off" },
                    status.mode
                );
                if status.pump_on {
                    status.remaining_ms.min(poll.as_millis() as u64)
                } else {
                    0
                }
            }
            Ok(Message::Error { code, message }) => {
                eprintln!("service rejected reading ({code:?}): {message}");
                0
            }
            Ok(other) => {
                return Err(CliError::Runtime(format!("unexpected reply {other:?}")));
            }
            Err(e) => return Err(CliError::Runtime(format!("bad reply: {e}"))),
        };

        let poll_ms = poll.as_millis() as u64;
        state = advance(&state, true, pump_on_ms, &params);
        state = advance(&state, false, poll_ms.saturating_sub(pump_on_ms), &params);
        next += poll;
    }
    Ok(())
}

fn advance(state: &SimState, pump_on: bool, ms: u64, params: &PlantParams) -> SimState {
    if ms == 0 {
        return state.clone();
    }
    let step = PlantParams {
        dt_s: ms as f64 / 1000.0,
        ..*params
    };
    step_soil(state, pump_on, &step)
}

fn wall_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}
