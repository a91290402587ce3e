use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

use crate::model_server::ObservationPayload;
use crate::protocol::{
    check_handshake, handshake_payload, Channel, ChannelError, MsgType, Payload, ProtocolError, Role, Value,
};

#[derive(Debug, thiserror::Error)]
pub enum ConnectError {
    #[error("bad endpoint {0:?}; expected ws://host:port")]
    BadEndpoint(String),
    #[error("cannot reach {endpoint}: {reason}")]
    Unreachable { endpoint: String, reason: String },
    #[error("handshake with {endpoint} failed: {reason}")]
    Handshake { endpoint: String, reason: String },
}

/// Why a single observe→act exchange failed.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ActError {
    #[error("no action within the step timeout")]
    Timeout,
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("model error: {0}")]
    Model(String),
    #[error("connection closed")]
    Closed,
}

impl From<ChannelError> for ActError {
    fn from(e: ChannelError) -> Self {
        match e {
            ChannelError::Timeout => ActError::Timeout,
            ChannelError::Closed => ActError::Closed,
            ChannelError::Protocol(p) => ActError::Protocol(p.to_string()),
            ChannelError::Transport(t) => ActError::Protocol(t),
        }
    }
}

fn host_port(endpoint: &str) -> Option<&str> {
    let rest = endpoint.strip_prefix("ws://")?;
    let hp = rest.split('/').next()?;
    (!hp.is_empty()).then_some(hp)
}

/// Runner side of a model-server connection, already handshaken.
pub struct Connection {
    ch: Channel<TcpStream>,
    endpoint: String,
    action_dim: Option<usize>,
    server_config: Option<String>,
}

impl Connection {
    pub fn connect(endpoint: &str, timeout: Duration) -> Result<Self, ConnectError> {
        let hp = host_port(endpoint).ok_or_else(|| ConnectError::BadEndpoint(endpoint.to_owned()))?;
        let unreachable = |reason: String| ConnectError::Unreachable {
            endpoint: endpoint.to_owned(),
            reason,
        };
        let addrs: Vec<_> = hp
            .to_socket_addrs()
            .map_err(|e| unreachable(e.to_string()))?
            .collect();
        let mut last = String::from("no addresses resolved");
        let mut stream = None;
        for addr in addrs {
            match TcpStream::connect_timeout(&addr, timeout) {
                Ok(s) => {
                    stream = Some(s);
                    break;
                }
                Err(e) => last = e.to_string(),
            }
        }
        let stream = stream.ok_or_else(|| unreachable(last))?;
        let _ = stream.set_nodelay(true);
        stream
            .set_read_timeout(Some(timeout))
            .map_err(|e| unreachable(e.to_string()))?;
        let handshake_err = |reason: String| ConnectError::Handshake {
            endpoint: endpoint.to_owned(),
            reason,
        };
        let (ws, _) = tungstenite::client(endpoint, stream).map_err(|e| handshake_err(e.to_string()))?;
        let mut ch = Channel::new(ws);
        ch.send(MsgType::Handshake, handshake_payload(Role::Runner))
            .map_err(|e| handshake_err(e.to_string()))?;
        let reply = ch.recv().map_err(|e| handshake_err(e.to_string()))?;
        if reply.msg_type == MsgType::Error {
            let msg = reply.payload.get("message").and_then(Value::as_str).unwrap_or("server refused");
            return Err(handshake_err(msg.to_owned()));
        }
        let role = check_handshake(&reply).map_err(|e| handshake_err(e.to_string()))?;
        if role != Role::Model.as_str() {
            return Err(handshake_err(format!("peer announced role {role:?}")));
        }
        Ok(Connection {
            ch,
            endpoint: endpoint.to_owned(),
            action_dim: reply.payload.get("action_dim").and_then(Value::as_u64).map(|d| d as usize),
            server_config: reply.payload.get("server_config").and_then(Value::as_str).map(str::to_owned),
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn action_dim(&self) -> Option<usize> {
        self.action_dim
    }

    /// JSON text of the server's configuration, as announced in its handshake.
    pub fn server_config(&self) -> Option<&str> {
        self.server_config.as_deref()
    }

    pub fn channel_mut(&mut self) -> &mut Channel<TcpStream> {
        &mut self.ch
    }

    pub fn episode_start(&mut self, episode_id: &str, task_id: &str, seed: u64) -> Result<(), ActError> {
        let mut p = Payload::new();
        p.insert("episode_id".into(), Value::from(episode_id));
        p.insert("task_id".into(), Value::from(task_id));
        p.insert("seed".into(), Value::UInt(seed));
        Ok(self.ch.send(MsgType::EpisodeStart, p)?)
    }

    pub fn episode_end(&mut self, episode_id: &str, success: bool, steps: u64) -> Result<(), ActError> {
        let mut p = Payload::new();
        p.insert("episode_id".into(), Value::from(episode_id));
        p.insert("success".into(), Value::Bool(success));
        p.insert("steps".into(), Value::UInt(steps));
        Ok(self.ch.send(MsgType::EpisodeEnd, p)?)
    }

    /// Sends one observation and waits at most `timeout` for the action.
    pub fn act(&mut self, obs: &ObservationPayload, timeout: Duration) -> Result<Vec<f64>, ActError> {
        self.ch
            .get_ref()
            .set_read_timeout(Some(timeout.max(Duration::from_millis(1))))
            .map_err(|e| ActError::Protocol(e.to_string()))?;
        self.ch.send(MsgType::Observation, obs.to_payload())?;
        let reply = self.ch.recv()?;
        match reply.msg_type {
            MsgType::Action => first_action_row(&reply.payload).map_err(|e| ActError::Protocol(e.to_string())),
            MsgType::Error => {
                let reason = reply.payload.get("reason").and_then(Value::as_str).unwrap_or("");
                let message = reply.payload.get("message").and_then(Value::as_str).unwrap_or("").to_owned();
                if reason == "model_error" {
                    Err(ActError::Model(message))
                } else {
                    Err(ActError::Protocol(message))
                }
            }
            other => Err(ActError::Protocol(
                ProtocolError::UnexpectedMessage {
                    wanted: "action",
                    got: other,
                }
                .to_string(),
            )),
        }
    }

    pub fn close(mut self) {
        self.ch.close();
    }
}

fn first_action_row(p: &Payload) -> Result<Vec<f64>, ProtocolError> {
    p.get("actions")
        .and_then(Value::as_array)
        .and_then(|rows| rows.first())
        .and_then(Value::to_f64_vec)
        .ok_or_else(|| ProtocolError::InvalidPayload("action payload needs a nonempty \"actions\" matrix".into()))
}
