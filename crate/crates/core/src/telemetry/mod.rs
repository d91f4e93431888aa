//! Event log, wire protocol and the pure server state the service hosts.

pub mod event;
pub mod protocol;
pub mod server;

pub use event::{
    event_to_line, read_ndjson, replay, to_ndjson, write_ndjson, DecisionRecord, Event, EventKind,
    EventLog, LogError, ServerStatus,
};
pub use protocol::{
    decode_message, encode_message, ErrorCode, Message, ProtocolError, PROTOCOL_VERSION,
};
pub use server::{controller_state_from, Outcome, ServerState, TelemetryError};
