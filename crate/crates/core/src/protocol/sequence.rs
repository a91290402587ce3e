use super::{Message, ProtocolError};

/// Checks `msg` against the next expected sequence number for its direction
/// and returns the new expectation.
pub fn check_sequence(expected: u64, msg: &Message) -> Result<u64, ProtocolError> {
    if msg.seq == expected {
        Ok(expected + 1)
    } else {
        Err(ProtocolError::SequenceGap {
            expected,
            got: msg.seq,
        })
    }
}

/// Per-direction sequence state owned by one side of a connection.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct SequenceCounter {
    next: u64,
}

impl SequenceCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn peek(&self) -> u64 {
        self.next
    }

    /// Returns the number to stamp on an outgoing message and advances.
    pub fn issue(&mut self) -> u64 {
        let seq = self.next;
        self.next += 1;
        seq
    }

    /// Validates an incoming message, advancing only on success.
    pub fn accept(&mut self, msg: &Message) -> Result<(), ProtocolError> {
        self.next = check_sequence(self.next, msg)?;
        Ok(())
    }
}
