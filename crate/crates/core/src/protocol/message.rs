use std::fmt;
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use super::value::{Payload, Value};
use super::ProtocolError;

/// Maximum nesting depth accepted in a payload, on both encode and decode.
pub const MAX_DEPTH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MsgType {
    Handshake,
    Observation,
    Action,
    EpisodeStart,
    EpisodeEnd,
    Error,
}

impl MsgType {
    pub const ALL: [MsgType; 6] = [
        MsgType::Handshake,
        MsgType::Observation,
        MsgType::Action,
        MsgType::EpisodeStart,
        MsgType::EpisodeEnd,
        MsgType::Error,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MsgType::Handshake => "handshake",
            MsgType::Observation => "observation",
            MsgType::Action => "action",
            MsgType::EpisodeStart => "episode_start",
            MsgType::EpisodeEnd => "episode_end",
            MsgType::Error => "error",
        }
    }
}

impl fmt::Display for MsgType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MsgType {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MsgType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| ProtocolError::UnknownMessageType(s.to_owned()))
    }
}

/// The protocol envelope. One message per transport frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub msg_type: MsgType,
    pub payload: Payload,
    pub seq: u64,
    /// Seconds since the Unix epoch. Informational only.
    pub timestamp: f64,
}

impl Message {
    pub fn new(msg_type: MsgType, payload: Payload, seq: u64) -> Self {
        Message {
            msg_type,
            payload,
            seq,
            timestamp: now_seconds(),
        }
    }
}

pub fn now_seconds() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Encodes a message as a single msgpack map with keys `type`, `payload`,
/// `seq`, `ts` in that order. Integers use the smallest msgpack encoding,
/// floats are always float64, map entries keep insertion order.
pub fn encode_message(msg: &Message) -> Result<Vec<u8>, ProtocolError> {
    if !msg.timestamp.is_finite() {
        return Err(ProtocolError::UnencodablePayload(
            "ts: non-finite timestamp".into(),
        ));
    }
    let mut buf = Vec::with_capacity(64);
    rmp::encode::write_map_len(&mut buf, 4).expect("vec write");
    rmp::encode::write_str(&mut buf, "type").expect("vec write");
    rmp::encode::write_str(&mut buf, msg.msg_type.as_str()).expect("vec write");
    rmp::encode::write_str(&mut buf, "payload").expect("vec write");
    write_map(&mut buf, &msg.payload, "payload", 0)?;
    rmp::encode::write_str(&mut buf, "seq").expect("vec write");
    rmp::encode::write_uint(&mut buf, msg.seq).expect("vec write");
    rmp::encode::write_str(&mut buf, "ts").expect("vec write");
    rmp::encode::write_f64(&mut buf, msg.timestamp).expect("vec write");
    Ok(buf)
}

fn write_map(buf: &mut Vec<u8>, map: &Payload, path: &str, depth: usize) -> Result<(), ProtocolError> {
    if depth >= MAX_DEPTH {
        return Err(ProtocolError::UnencodablePayload(format!("{path}: nesting too deep")));
    }
    let len = u32::try_from(map.len())
        .map_err(|_| ProtocolError::UnencodablePayload(format!("{path}: map too large")))?;
    rmp::encode::write_map_len(buf, len).expect("vec write");
    for (k, v) in map {
        rmp::encode::write_str(buf, k).expect("vec write");
        write_value(buf, v, &format!("{path}.{k}"), depth + 1)?;
    }
    Ok(())
}

fn write_value(buf: &mut Vec<u8>, value: &Value, path: &str, depth: usize) -> Result<(), ProtocolError> {
    match value {
        Value::Nil => rmp::encode::write_nil(buf).expect("vec write"),
        Value::Bool(b) => rmp::encode::write_bool(buf, *b).expect("vec write"),
        Value::Int(i) => {
            rmp::encode::write_sint(buf, *i).expect("vec write");
        }
        Value::UInt(u) => {
            rmp::encode::write_uint(buf, *u).expect("vec write");
        }
        Value::Float(f) => {
            if !f.is_finite() {
                return Err(ProtocolError::UnencodablePayload(format!(
                    "{path}: non-finite float"
                )));
            }
            rmp::encode::write_f64(buf, *f).expect("vec write");
        }
        Value::Str(s) => rmp::encode::write_str(buf, s).expect("vec write"),
        Value::Bin(b) => rmp::encode::write_bin(buf, b).expect("vec write"),
        Value::Array(items) => {
            if depth >= MAX_DEPTH {
                return Err(ProtocolError::UnencodablePayload(format!("{path}: nesting too deep")));
            }
            let len = u32::try_from(items.len())
                .map_err(|_| ProtocolError::UnencodablePayload(format!("{path}: array too large")))?;
            rmp::encode::write_array_len(buf, len).expect("vec write");
            for (i, item) in items.iter().enumerate() {
                write_value(buf, item, &format!("{path}[{i}]"), depth + 1)?;
            }
        }
        Value::Map(m) => write_map(buf, m, path, depth)?,
    }
    Ok(())
}

/// Parses one frame. The frame must hold exactly one msgpack map with the
/// four envelope keys and nothing after it.
pub fn decode_message(data: &[u8]) -> Result<Message, ProtocolError> {
    let mut cursor = data;
    let raw = rmpv::decode::read_value_with_max_depth(&mut cursor, MAX_DEPTH + 2)
        .map_err(|e| ProtocolError::MalformedFrame(format!("not msgpack: {e}")))?;
    if !cursor.is_empty() {
        return Err(ProtocolError::MalformedFrame(format!(
            "{} trailing bytes after message",
            cursor.len()
        )));
    }
    let rmpv::Value::Map(entries) = raw else {
        return Err(ProtocolError::MalformedFrame("top level is not a map".into()));
    };

    let mut msg_type = None;
    let mut payload = None;
    let mut seq = None;
    let mut ts = None;
    for (k, v) in entries {
        let key = k
            .as_str()
            .ok_or_else(|| ProtocolError::MalformedFrame("non-string envelope key".into()))?
            .to_owned();
        let slot_taken = match key.as_str() {
            "type" => {
                let s = v
                    .as_str()
                    .ok_or_else(|| ProtocolError::MalformedFrame("type is not a string".into()))?;
                msg_type.replace(s.to_owned()).is_some()
            }
            "payload" => {
                let Value::Map(m) = convert(v, "payload")? else {
                    return Err(ProtocolError::MalformedFrame("payload is not a map".into()));
                };
                payload.replace(m).is_some()
            }
            "seq" => {
                let n = v
                    .as_u64()
                    .ok_or_else(|| ProtocolError::MalformedFrame("seq is not an unsigned integer".into()))?;
                seq.replace(n).is_some()
            }
            "ts" => {
                let t = match v {
                    rmpv::Value::F64(t) => t,
                    rmpv::Value::F32(t) => t as f64,
                    rmpv::Value::Integer(i) => i
                        .as_f64()
                        .ok_or_else(|| ProtocolError::MalformedFrame("bad ts".into()))?,
                    _ => return Err(ProtocolError::MalformedFrame("ts is not a number".into())),
                };
                ts.replace(t).is_some()
            }
            other => {
                return Err(ProtocolError::MalformedFrame(format!("unexpected envelope key {other:?}")))
            }
        };
        if slot_taken {
            return Err(ProtocolError::MalformedFrame(format!("duplicate envelope key {key:?}")));
        }
    }

    let missing = |name: &str| ProtocolError::MalformedFrame(format!("missing key {name:?}"));
    let msg_type: MsgType = msg_type.ok_or_else(|| missing("type"))?.parse()?;
    Ok(Message {
        msg_type,
        payload: payload.ok_or_else(|| missing("payload"))?,
        seq: seq.ok_or_else(|| missing("seq"))?,
        timestamp: ts.ok_or_else(|| missing("ts"))?,
    })
}

fn convert(v: rmpv::Value, path: &str) -> Result<Value, ProtocolError> {
    Ok(match v {
        rmpv::Value::Nil => Value::Nil,
        rmpv::Value::Boolean(b) => Value::Bool(b),
        rmpv::Value::Integer(i) => {
            if let Some(u) = i.as_u64() {
                Value::UInt(u)
            } else if let Some(s) = i.as_i64() {
                Value::Int(s)
            } else {
                return Err(ProtocolError::MalformedFrame(format!("{path}: integer out of range")));
            }
        }
        rmpv::Value::F32(f) => Value::Float(f as f64),
        rmpv::Value::F64(f) => Value::Float(f),
        rmpv::Value::String(s) => match s.into_str() {
            Some(s) => Value::Str(s),
            None => return Err(ProtocolError::MalformedFrame(format!("{path}: invalid UTF-8 string"))),
        },
        rmpv::Value::Binary(b) => Value::Bin(b),
        rmpv::Value::Array(items) => Value::Array(
            items
                .into_iter()
                .enumerate()
                .map(|(i, item)| convert(item, &format!("{path}[{i}]")))
                .collect::<Result<_, _>>()?,
        ),
        rmpv::Value::Map(entries) => {
            let mut map = Payload::with_capacity(entries.len());
            for (k, v) in entries {
                let rmpv::Value::String(k) = k else {
                    return Err(ProtocolError::MalformedFrame(format!("{path}: non-string map key")));
                };
                let Some(k) = k.into_str() else {
                    return Err(ProtocolError::MalformedFrame(format!("{path}: invalid UTF-8 key")));
                };
                let child = convert(v, &format!("{path}.{k}"))?;
                if map.insert(k.clone(), child).is_some() {
                    return Err(ProtocolError::MalformedFrame(format!("{path}: duplicate key {k:?}")));
                }
            }
            Value::Map(map)
        }
        rmpv::Value::Ext(tag, _) => {
            return Err(ProtocolError::MalformedFrame(format!(
                "{path}: extension type {tag} not allowed"
            )))
        }
    })
}
