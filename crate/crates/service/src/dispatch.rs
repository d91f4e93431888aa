use irrigation_core::telemetry::{decode_message, ErrorCode, Message, TelemetryError};

use crate::actor::{RequestError, ServiceHandle};

/// Answers one protocol line from a TCP or WebSocket client: `status` when
/// the message was accepted, `error` otherwise.
pub async fn respond(handle: &ServiceHandle, line: &[u8], source: &str) -> Message {
    let msg = match decode_message(line) {
        Ok(msg) => msg,
        Err(e) => return e.to_message(),
    };
    let result = match msg {
        Message::Reading(reading) => handle.submit_reading(reading).await,
        Message::Override {
            duty,
            source: client_source,
        } => {
            handle
                .override_duty(duty, client_source.unwrap_or_else(|| source.to_string()))
                .await
        }
        Message::Mode { mode } => handle.set_mode(mode).await,
        Message::Status(_) | Message::Event(_) | Message::Error { .. } => {
            return Message::Error {
                code: ErrorCode::Rejected,
                message: "message type is only sent by the service".into(),
            }
        }
    };
    match result {
        Ok(status) => Message::Status(status),
        Err(e) => error_message(&e),
    }
}

pub fn error_message(e: &RequestError) -> Message {
    let code = match e {
        RequestError::Rejected(TelemetryError::InvalidReading(_)) => ErrorCode::InvalidReading,
        _ => ErrorCode::Rejected,
    };
    Message::Error {
        code,
        message: e.to_string(),
    }
}
