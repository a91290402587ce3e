use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use super::batch::InferenceEngine;
use super::config::ModelServerConfig;
use super::ensemble::{ensemble_action, ChunkBuffer, EnsembleStrategy};
use super::policy::Policy;
use super::{ObservationPayload, PredictContext};
use crate::protocol::{
    check_handshake, error_payload, handshake_payload, Channel, ChannelError, Message, MsgType, Payload,
    ProtocolError, Role, Value,
};

/// How often idle connection handlers and the acceptor look at the
/// shutdown flag.
const POLL_INTERVAL: Duration = Duration::from_millis(50);

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: io::Error },
    #[error("invalid server config at {0}: {1}")]
    InvalidConfig(String, String),
}

/// A running model server. Dropping the handle shuts it down.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
    engine: Arc<InferenceEngine>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn endpoint(&self) -> String {
        format!("ws://{}", self.addr)
    }

    pub fn engine(&self) -> &InferenceEngine {
        &self.engine
    }

    pub fn is_shutting_down(&self) -> bool {
        self.shutdown.load(Ordering::SeqCst)
    }

    /// Stops accepting, lets every connection finish the request it is
    /// serving, then drains and stops the inference thread.
    pub fn shutdown(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
        self.engine.shutdown();
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Builds the configured policy and starts serving.
pub fn serve(config: &ModelServerConfig) -> Result<ServerHandle, ServeError> {
    config
        .validate()
        .map_err(|(k, m)| ServeError::InvalidConfig(k, m))?;
    let policy = config.policy.build(config.chunk_horizon);
    serve_with_policy(config, policy)
}

/// Starts serving an arbitrary policy with the batching/ensembling knobs of
/// `config` (its `policy` section is only echoed in the handshake).
pub fn serve_with_policy(config: &ModelServerConfig, policy: Arc<dyn Policy>) -> Result<ServerHandle, ServeError> {
    config
        .validate()
        .map_err(|(k, m)| ServeError::InvalidConfig(k, m))?;
    let addr = config.bind_addr();
    let listener = TcpListener::bind(&addr).map_err(|source| ServeError::Bind {
        addr: addr.clone(),
        source,
    })?;
    listener
        .set_nonblocking(true)
        .map_err(|source| ServeError::Bind { addr, source })?;
    let local = listener.local_addr().expect("bound listener has an address");

    let engine = Arc::new(InferenceEngine::start(
        Arc::clone(&policy),
        config.max_batch_size,
        config.max_wait(),
    ));
    let shutdown = Arc::new(AtomicBool::new(false));
    let settings = Arc::new(ConnSettings {
        chunk_horizon: config.chunk_horizon,
        replan_interval: config.replan_interval as u64,
        ensemble: config.ensemble,
        action_dim: policy.action_dim(),
        server_config_json: serde_json::to_string(config).expect("config serializes"),
    });

    let acceptor = {
        let engine = Arc::clone(&engine);
        let shutdown = Arc::clone(&shutdown);
        std::thread::Builder::new()
            .name("acceptor".into())
            .spawn(move || accept_loop(listener, engine, settings, shutdown))
            .expect("spawn acceptor")
    };
    log::info!("model server listening on ws://{local}");
    Ok(ServerHandle {
        addr: local,
        shutdown,
        acceptor: Some(acceptor),
        engine,
    })
}

struct ConnSettings {
    chunk_horizon: usize,
    replan_interval: u64,
    ensemble: EnsembleStrategy,
    action_dim: usize,
    server_config_json: String,
}

fn accept_loop(
    listener: TcpListener,
    engine: Arc<InferenceEngine>,
    settings: Arc<ConnSettings>,
    shutdown: Arc<AtomicBool>,
) {
    let mut handlers: Vec<JoinHandle<()>> = Vec::new();
    while !shutdown.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let engine = Arc::clone(&engine);
                let settings = Arc::clone(&settings);
                let shutdown = Arc::clone(&shutdown);
                let spawned = std::thread::Builder::new()
                    .name(format!("conn-{peer}"))
                    .spawn(move || {
                        if let Err(e) = handle_connection(stream, &engine, &settings, &shutdown) {
                            log::debug!("connection {peer} ended: {e}");
                        }
                    });
                match spawned {
                    Ok(h) => handlers.push(h),
                    Err(e) => log::error!("cannot spawn handler for {peer}: {e}"),
                }
                handlers.retain(|h| !h.is_finished());
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(2)),
            Err(e) => {
                log::warn!("accept failed: {e}");
                std::thread::sleep(POLL_INTERVAL);
            }
        }
    }
    for h in handlers {
        let _ = h.join();
    }
}

/// Per-connection episode state.
struct Session {
    buffer: ChunkBuffer,
    ctx: PredictContext,
}

impl Session {
    fn new(capacity: usize) -> Self {
        Session {
            buffer: ChunkBuffer::new(capacity),
            ctx: PredictContext::default(),
        }
    }

    fn start_episode(&mut self, payload: &Payload) {
        self.buffer.clear();
        self.ctx = PredictContext {
            episode_id: payload.get("episode_id").and_then(Value::as_str).unwrap_or_default().to_owned(),
            task_id: payload.get("task_id").and_then(Value::as_str).unwrap_or_default().to_owned(),
            step_index: 0,
            obs_step: 0,
        };
    }
}

enum Outcome {
    Continue,
    Close,
}

fn handle_connection(
    stream: TcpStream,
    engine: &InferenceEngine,
    settings: &ConnSettings,
    shutdown: &AtomicBool,
) -> Result<(), ChannelError> {
    stream.set_nonblocking(false).map_err(|e| ChannelError::Transport(e.to_string()))?;
    let _ = stream.set_nodelay(true);
    stream
        .set_read_timeout(Some(Duration::from_secs(5)))
        .map_err(|e| ChannelError::Transport(e.to_string()))?;
    let ws = tungstenite::accept(stream).map_err(|e| ChannelError::Transport(e.to_string()))?;
    ws.get_ref()
        .set_read_timeout(Some(POLL_INTERVAL))
        .map_err(|e| ChannelError::Transport(e.to_string()))?;
    let mut ch = Channel::new(ws);
    let mut session = Session::new(settings.chunk_horizon);
    let mut handshaken = false;

    loop {
        let msg = match ch.recv() {
            Ok(m) => m,
            Err(ChannelError::Timeout) => {
                if shutdown.load(Ordering::SeqCst) {
                    ch.close();
                    return Ok(());
                }
                continue;
            }
            Err(ChannelError::Protocol(e @ ProtocolError::SequenceGap { .. })) => {
                let _ = ch.send(MsgType::Error, error_payload("protocol_error", &e.to_string()));
                ch.close();
                return Err(e.into());
            }
            Err(ChannelError::Protocol(e)) => {
                // undecodable frame: report it and keep the connection
                ch.send(MsgType::Error, error_payload("protocol_error", &e.to_string()))?;
                continue;
            }
            Err(e) => return Err(e),
        };

        let outcome = match msg.msg_type {
            MsgType::Handshake => match check_handshake(&msg) {
                Ok(_) => {
                    handshaken = true;
                    let mut reply = handshake_payload(Role::Model);
                    reply.insert("action_dim".into(), Value::UInt(settings.action_dim as u64));
                    reply.insert("server_config".into(), Value::from(settings.server_config_json.as_str()));
                    ch.send(MsgType::Handshake, reply)?;
                    Outcome::Continue
                }
                Err(e) => {
                    ch.send(MsgType::Error, error_payload("protocol_error", &e.to_string()))?;
                    Outcome::Close
                }
            },
            _ if !handshaken => {
                ch.send(
                    MsgType::Error,
                    error_payload("protocol_error", "handshake required before any other message"),
                )?;
                Outcome::Close
            }
            MsgType::EpisodeStart => {
                session.start_episode(&msg.payload);
                Outcome::Continue
            }
            MsgType::EpisodeEnd => Outcome::Continue,
            MsgType::Observation => {
                let reply = answer_observation(&msg, &mut session, engine, settings);
                match reply {
                    Ok(actions) => {
                        let mut p = Payload::new();
                        p.insert("actions".into(), Value::Array(vec![Value::f64_array(&actions)]));
                        ch.send(MsgType::Action, p)?;
                    }
                    Err((reason, detail)) => ch.send(MsgType::Error, error_payload(reason, &detail))?,
                }
                Outcome::Continue
            }
            MsgType::Action | MsgType::Error => {
                ch.send(
                    MsgType::Error,
                    error_payload("protocol_error", &format!("{} is not accepted by a model server", msg.msg_type)),
                )?;
                Outcome::Continue
            }
        };
        if matches!(outcome, Outcome::Close) || shutdown.load(Ordering::SeqCst) {
            ch.close();
            return Ok(());
        }
    }
}

/// Runs predict when the step falls on the replan cadence, then ensembles
/// the buffered chunks for this step.
fn answer_observation(
    msg: &Message,
    session: &mut Session,
    engine: &InferenceEngine,
    settings: &ConnSettings,
) -> Result<Vec<f64>, (&'static str, String)> {
    let obs = ObservationPayload::from_payload(&msg.payload).map_err(|e| ("protocol_error", e.to_string()))?;
    let step = session.buffer.current_step();
    let result = (|| {
        if step % settings.replan_interval == 0 {
            let ctx = PredictContext {
                obs_step: step,
                ..session.ctx.clone()
            };
            session.ctx.step_index += 1;
            let mut chunk = engine
                .predict_blocking(obs, ctx)
                .map_err(|e| ("model_error", e.to_string()))?;
            if chunk.dim() != settings.action_dim {
                return Err(("model_error", format!("chunk width {} != action_dim {}", chunk.dim(), settings.action_dim)));
            }
            chunk.issued_step = step;
            session
                .buffer
                .push_chunk(chunk)
                .map_err(|e| ("model_error", e.to_string()))?;
        }
        ensemble_action(&session.buffer, settings.ensemble).map_err(|e| ("model_error", e.to_string()))
    })();
    session.buffer.advance();
    result
}
