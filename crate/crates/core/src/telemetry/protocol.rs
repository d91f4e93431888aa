//! Line protocol shared by sensor nodes and the service.
//!
//! Every message is one JSON object on one `\n`-terminated line with a `type`
//! discriminator and an optional schema version `v` (currently 1):
//!
//! ```text
//! {"type":"reading","v":1,"t_c":20.0,"h_pct":30.0,"m_pct":5.0,"ts_ms":1700000000000}
//! {"type":"override","duty":"full"}
//! ```

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::event::{Event, ServerStatus};
use crate::controller::ControllerMode;
use crate::rulebase::{PumpDuty, SensorReading};

pub const PROTOCOL_VERSION: u64 = 1;

const KNOWN_TYPES: &[&str] = &["reading", "override", "mode", "status", "event", "error"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Reading(SensorReading),
    Override {
        duty: PumpDuty,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        source: Option<String>,
    },
    Mode {
        mode: ControllerMode,
    },
    Status(ServerStatus),
    Event(Event),
    Error {
        code: ErrorCode,
        message: String,
    },
}

/// Machine-readable reason carried by `error` replies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    MalformedFrame,
    MissingType,
    UnknownType,
    UnsupportedVersion,
    SchemaViolation,
    InvalidReading,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("message has no \"type\" field")]
    MissingType,
    #[error("unknown message type `{0}`")]
    UnknownType(String),
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(String),
    #[error("schema violation: {0}")]
    Schema(String),
}

impl ProtocolError {
    pub fn code(&self) -> ErrorCode {
        match self {
            ProtocolError::Malformed(_) => ErrorCode::MalformedFrame,
            ProtocolError::MissingType => ErrorCode::MissingType,
            ProtocolError::UnknownType(_) => ErrorCode::UnknownType,
            ProtocolError::UnsupportedVersion(_) => ErrorCode::UnsupportedVersion,
            ProtocolError::Schema(_) => ErrorCode::SchemaViolation,
        }
    }

    pub fn to_message(&self) -> Message {
        Message::Error {
            code: self.code(),
            message: self.to_string(),
        }
    }
}

/// Serializes `msg` as one line including the trailing newline.
pub fn encode_message(msg: &Message) -> String {
    let mut value = serde_json::to_value(msg).expect("messages always serialize");
    if let Value::Object(map) = &mut value {
        map.insert("v".into(), Value::from(PROTOCOL_VERSION));
    }
    let mut line = value.to_string();
    line.push('\n');
    line
}

pub fn decode_message(bytes: &[u8]) -> Result<Message, ProtocolError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| ProtocolError::Malformed(format!("invalid utf-8: {e}")))?;
    let text = text.trim_end_matches(['\n', '\r']);
    if text.trim().is_empty() {
        return Err(ProtocolError::Malformed("empty line".into()));
    }
    let mut value: Value =
        serde_json::from_str(text).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    let map = value
        .as_object_mut()
        .ok_or_else(|| ProtocolError::Schema("expected a JSON object".into()))?;

    match map.get("type") {
        None => return Err(ProtocolError::MissingType),
        Some(Value::String(t)) if KNOWN_TYPES.contains(&t.as_str()) => {}
        Some(Value::String(t)) => return Err(ProtocolError::UnknownType(t.clone())),
        Some(other) => {
            return Err(ProtocolError::Schema(format!(
                "\"type\" must be a string, got {other}"
            )))
        }
    }
    if let Some(v) = map.remove("v") {
        if v.as_u64() != Some(PROTOCOL_VERSION) {
            return Err(ProtocolError::UnsupportedVersion(v.to_string()));
        }
    }
    serde_json::from_value(value).map_err(|e| ProtocolError::Schema(e.to_string()))
}
