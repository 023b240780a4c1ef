//! Agent-to-agent handshake.
//!
//! Messages travel as length-prefixed frames holding canonical JSON
//! envelopes. [`step`] is the pure transition function of the handshake;
//! [`run_handshake`] drives it over a [`Transport`] and records a
//! transcript that [`replay`] can check frame by frame.

mod driver;
mod machine;
mod message;

pub use driver::{
    replay, run_handshake, Direction, HandshakeReport, ReplayError, ScriptedCounterpart, Transcript, TranscriptError,
    Transport, TransportError,
};
pub use machine::{step, Event, HandshakeState, Phase, StepContext, DEFAULT_TIMEOUT_SECS};
pub use message::{decode, encode, Body, DecodeError, Message, MessageType, MAX_FRAME_LEN, PROTOCOL_VERSION};
