use std::io::{self, Read, Write};

use tungstenite::{Message as Frame, WebSocket};

use super::{decode_message, encode_message, Message, MsgType, Payload, ProtocolError, SequenceCounter};

#[derive(Debug, thiserror::Error)]
pub enum ChannelError {
    #[error("timed out waiting for a frame")]
    Timeout,
    #[error("connection closed")]
    Closed,
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("transport error: {0}")]
    Transport(String),
}

impl From<tungstenite::Error> for ChannelError {
    fn from(e: tungstenite::Error) -> Self {
        match e {
            tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed => ChannelError::Closed,
            tungstenite::Error::Io(io) => match io.kind() {
                io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => ChannelError::Timeout,
                io::ErrorKind::ConnectionReset
                | io::ErrorKind::ConnectionAborted
                | io::ErrorKind::BrokenPipe
                | io::ErrorKind::UnexpectedEof => ChannelError::Closed,
                _ => ChannelError::Transport(io.to_string()),
            },
            tungstenite::Error::Protocol(p) => ChannelError::Transport(p.to_string()),
            other => ChannelError::Transport(other.to_string()),
        }
    }
}

/// A WebSocket carrying one protocol message per binary frame, with
/// independent sequence counters for each direction.
pub struct Channel<S> {
    ws: WebSocket<S>,
    outbound: SequenceCounter,
    inbound: SequenceCounter,
}

impl<S: Read + Write> Channel<S> {
    pub fn new(ws: WebSocket<S>) -> Self {
        Channel {
            ws,
            outbound: SequenceCounter::new(),
            inbound: SequenceCounter::new(),
        }
    }

    pub fn get_ref(&self) -> &S {
        self.ws.get_ref()
    }

    pub fn send(&mut self, msg_type: MsgType, payload: Payload) -> Result<(), ChannelError> {
        let msg = Message::new(msg_type, payload, self.outbound.peek());
        let bytes = encode_message(&msg)?;
        self.ws.send(Frame::Binary(bytes.into()))?;
        self.outbound.issue();
        Ok(())
    }

    /// Sends pre-encoded bytes as one frame without touching sequence state.
    pub fn send_raw(&mut self, bytes: Vec<u8>) -> Result<(), ChannelError> {
        self.ws.send(Frame::Binary(bytes.into()))?;
        Ok(())
    }

    pub fn next_outbound_seq(&self) -> u64 {
        self.outbound.peek()
    }

    /// Receives the next protocol message. Undecodable frames are reported
    /// without consuming a sequence number; out-of-order frames yield
    /// `SequenceGap`.
    pub fn recv(&mut self) -> Result<Message, ChannelError> {
        loop {
            match self.ws.read()? {
                Frame::Binary(bytes) => {
                    let msg = decode_message(&bytes)?;
                    self.inbound.accept(&msg)?;
                    return Ok(msg);
                }
                Frame::Text(_) => {
                    return Err(ProtocolError::MalformedFrame("text frame on a binary protocol".into()).into())
                }
                Frame::Close(_) => return Err(ChannelError::Closed),
                Frame::Ping(_) | Frame::Pong(_) | Frame::Frame(_) => continue,
            }
        }
    }

    pub fn close(&mut self) {
        let _ = self.ws.close(None);
        let _ = self.ws.flush();
    }
}
