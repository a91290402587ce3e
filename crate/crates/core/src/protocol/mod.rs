//! Wire protocol: message envelope, msgpack codec, sequence discipline and
//! the WebSocket channel every connection runs on.
//!
//! Every frame holds one msgpack map with the keys `type`, `payload`, `seq`
//! and `ts`, emitted in that order. Sequence numbers start at 0 and grow by
//! one per message in each direction of a connection.

mod channel;
pub mod conformance;
mod message;
mod sequence;
mod value;

pub use channel::{Channel, ChannelError};
pub use message::{decode_message, encode_message, now_seconds, Message, MsgType, MAX_DEPTH};
pub use sequence::{check_sequence, SequenceCounter};
pub use value::{Payload, Value};

pub const PROTOCOL_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProtocolError {
    #[error("payload cannot be encoded: {0}")]
    UnencodablePayload(String),
    #[error("malformed frame: {0}")]
    MalformedFrame(String),
    #[error("unknown message type {0:?}")]
    UnknownMessageType(String),
    #[error("sequence gap: expected {expected}, got {got}")]
    SequenceGap { expected: u64, got: u64 },
    #[error("protocol version mismatch: ours {ours}, theirs {theirs}")]
    VersionMismatch { ours: u64, theirs: u64 },
    #[error("unexpected {got} message, wanted {wanted}")]
    UnexpectedMessage { wanted: &'static str, got: MsgType },
    #[error("invalid payload: {0}")]
    InvalidPayload(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Model,
    Runner,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Model => "model",
            Role::Runner => "runner",
        }
    }
}

/// Handshake payload: `{"protocol_version": 1, "role": ...}`.
pub fn handshake_payload(role: Role) -> Payload {
    let mut p = Payload::new();
    p.insert("protocol_version".into(), Value::UInt(PROTOCOL_VERSION));
    p.insert("role".into(), Value::from(role.as_str()));
    p
}

/// Validates a peer handshake and returns its declared role string.
pub fn check_handshake(msg: &Message) -> Result<String, ProtocolError> {
    if msg.msg_type != MsgType::Handshake {
        return Err(ProtocolError::UnexpectedMessage {
            wanted: "handshake",
            got: msg.msg_type,
        });
    }
    let version = msg
        .payload
        .get("protocol_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| ProtocolError::InvalidPayload("handshake without protocol_version".into()))?;
    if version != PROTOCOL_VERSION {
        return Err(ProtocolError::VersionMismatch {
            ours: PROTOCOL_VERSION,
            theirs: version,
        });
    }
    let role = msg
        .payload
        .get("role")
        .and_then(Value::as_str)
        .ok_or_else(|| ProtocolError::InvalidPayload("handshake without role".into()))?;
    Ok(role.to_owned())
}

/// Error payload: `{"reason": ..., "message": ...}`.
pub fn error_payload(reason: &str, message: &str) -> Payload {
    let mut p = Payload::new();
    p.insert("reason".into(), Value::from(reason));
    p.insert("message".into(), Value::from(message));
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn handshake_version_is_checked() {
        let ok = Message::new(MsgType::Handshake, handshake_payload(Role::Runner), 0);
        assert_eq!(check_handshake(&ok).unwrap(), "runner");

        let mut bad = ok.clone();
        bad.payload.insert("protocol_version".into(), Value::UInt(2));
        assert!(matches!(check_handshake(&bad), Err(ProtocolError::VersionMismatch { theirs: 2, .. })));

        let wrong = Message::new(MsgType::Observation, Payload::new(), 0);
        assert!(check_handshake(&wrong).is_err());
    }
}
