use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::machine::{step, Event, HandshakeState, Phase, StepContext};
use super::message::{decode, encode, Body, Message};
use crate::gatekeeper::{FieldSource, Gatekeeper, HitlPort, HitlRequest, HitlVerdict, IntentDeclaration, ProofOfValue};

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("transport failure: {0}")]
pub struct TransportError(pub String);

/// Frame channel to one counterpart.
pub trait Transport {
    /// Next inbound frame, or `None` when the state timeout elapses first.
    fn recv(&mut self) -> Result<Option<Vec<u8>>, TransportError>;
    fn send(&mut self, frame: &[u8]) -> Result<(), TransportError>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Outbound,
    Inbound,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Transcript {
    pub frames: Vec<(Direction, Vec<u8>)>,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum TranscriptError {
    #[error("line {0}: expected '>' or '<' followed by hex")]
    Syntax(usize),
}

impl Transcript {
    pub fn push(&mut self, dir: Direction, frame: Vec<u8>) {
        self.frames.push((dir, frame));
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Frames that decode, with their direction.
    pub fn messages(&self) -> impl Iterator<Item = (Direction, Message)> + '_ {
        self.frames.iter().filter_map(|(d, f)| decode(f).ok().map(|m| (*d, m)))
    }

    /// One frame per line: `>` or `<`, then the frame in lowercase hex.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (dir, frame) in &self.frames {
            out.push(if *dir == Direction::Outbound { '>' } else { '<' });
            out.push_str(&hex::encode(frame));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, TranscriptError> {
        let mut t = Self::default();
        for (i, line) in text.lines().enumerate() {
            let dir = match line.as_bytes().first() {
                Some(b'>') => Direction::Outbound,
                Some(b'<') => Direction::Inbound,
                _ => return Err(TranscriptError::Syntax(i)),
            };
            let frame = hex::decode(&line[1..]).map_err(|_| TranscriptError::Syntax(i))?;
            t.push(dir, frame);
        }
        Ok(t)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HandshakeReport {
    pub state: HandshakeState,
    pub transcript: Transcript,
    /// Sequence number of the audit record written at the terminal state.
    pub audit_seq: u64,
    /// Avatar-side tokens spent on emitted messages.
    pub avatar_tokens: u64,
}

impl HandshakeReport {
    /// Every field value the avatar released during the handshake.
    pub fn disclosures(&self) -> Vec<crate::gatekeeper::Disclosure> {
        self.transcript
            .messages()
            .filter(|(d, _)| *d == Direction::Outbound)
            .flat_map(|(_, m)| m.body.disclosures().to_vec())
            .collect()
    }
}

fn summary(state: &HandshakeState) -> String {
    let zone = state
        .decision
        .as_ref()
        .map_or(String::from("none"), |d| format!("{:?}", d.zone));
    let outcome = state.outcome.map_or(String::from("none"), |o| format!("{o:?}"));
    format!(
        "zone={zone} outcome={outcome} escalated={} terminal={:?}",
        state.escalated, state.phase
    )
}

/// Drives one handshake to a terminal state over `transport`, then appends
/// exactly one audit record.
pub fn run_handshake(
    transport: &mut dyn Transport,
    gatekeeper: &mut Gatekeeper,
    source: &dyn FieldSource,
    hitl: &mut dyn HitlPort,
    now: u64,
) -> HandshakeReport {
    let mut state = HandshakeState::idle();
    let mut transcript = Transcript::default();
    let mut tokens = 0;
    {
        let ctx = StepContext {
            ontology: &gatekeeper.ontology,
            purposes: &gatekeeper.purposes,
            policy: &gatekeeper.policy,
            source,
        };
        let mut queued: VecDeque<Event> = VecDeque::new();
        while !state.phase.is_terminal() {
            let event = if let Some(e) = queued.pop_front() {
                e
            } else if state.phase == Phase::Assessed {
                Event::Proceed
            } else if state.phase == Phase::AwaitingHitl {
                hitl_event(&state, gatekeeper, hitl, &mut transcript)
            } else {
                match transport.recv() {
                    Ok(Some(frame)) => {
                        let event = decode(&frame).map_or(Event::Invalid, Event::Inbound);
                        transcript.push(Direction::Inbound, frame);
                        event
                    }
                    Ok(None) => Event::Timeout,
                    Err(_) => Event::TransportFailure,
                }
            };
            let (next, out) = step(&state, &event, &ctx);
            for m in out {
                let frame = encode(&m);
                tokens += m.body.avatar_tokens(&gatekeeper.costs);
                let sent = transport.send(&frame);
                transcript.push(Direction::Outbound, frame);
                if sent.is_err() && !next.phase.is_terminal() {
                    queued.push_back(Event::TransportFailure);
                }
            }
            state = next;
        }
    }
    let counterpart = state.decl.as_ref().map_or(String::new(), |d| d.counterpart_id.clone());
    let fields = state.decl.as_ref().map_or(Vec::new(), |d| d.requested_fields.clone());
    let audit_seq = gatekeeper
        .audit
        .append(now, &counterpart, &summary(&state), &fields)
        .seq;
    HandshakeReport {
        state,
        transcript,
        audit_seq,
        avatar_tokens: tokens,
    }
}

fn hitl_event(
    state: &HandshakeState,
    gatekeeper: &Gatekeeper,
    hitl: &mut dyn HitlPort,
    transcript: &mut Transcript,
) -> Event {
    let (Some(decl), Some(decision)) = (&state.decl, &state.decision) else {
        return Event::Timeout;
    };
    let sid = state.session_id.clone().unwrap_or_default();
    let request = HitlRequest::new(&sid, decl, decision, &gatekeeper.ontology);
    let approve = match hitl.decide(&request) {
        HitlVerdict::Approve => true,
        HitlVerdict::Deny => false,
        HitlVerdict::Timeout => return Event::Timeout,
    };
    let msg = Message::new(sid, Body::HitlDecision { approve });
    transcript.push(Direction::Inbound, encode(&msg));
    Event::Inbound(msg)
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ReplayError {
    #[error("frame {0}: emission differs from the recorded frame")]
    Divergence(usize),
    #[error("frame {0}: outbound frame not explained by any event")]
    Unexplained(usize),
    #[error("transcript ended while {0} emissions were still expected")]
    Truncated(usize),
}

/// Re-runs a transcript through [`step`], checking every recorded outbound
/// frame against the emissions, and returns the reached state. Timeouts and
/// transport failures are recovered from the rejection they produced.
pub fn replay(transcript: &Transcript, ctx: &StepContext<'_>) -> Result<HandshakeState, ReplayError> {
    let frames = &transcript.frames;
    let mut state = HandshakeState::idle();
    let mut i = 0;
    while i < frames.len() || state.phase == Phase::Assessed {
        let event = if state.phase == Phase::Assessed {
            Event::Proceed
        } else {
            let (dir, frame) = &frames[i];
            match dir {
                Direction::Inbound => {
                    i += 1;
                    decode(frame).map_or(Event::Invalid, Event::Inbound)
                }
                Direction::Outbound => match decode(frame).map(|m| m.body) {
                    Ok(Body::Rejection(r)) if r.code == crate::gatekeeper::RejectionCode::Timeout => Event::Timeout,
                    Ok(Body::Rejection(r)) if r.code == crate::gatekeeper::RejectionCode::TransportFailure => {
                        Event::TransportFailure
                    }
                    _ => return Err(ReplayError::Unexplained(i)),
                },
            }
        };
        let (next, out) = step(&state, &event, ctx);
        let emitted = out.len();
        for (k, m) in out.into_iter().enumerate() {
            match frames.get(i) {
                Some((Direction::Outbound, f)) if *f == encode(&m) => i += 1,
                Some(_) => return Err(ReplayError::Divergence(i)),
                None => return Err(ReplayError::Truncated(emitted - k)),
            }
        }
        if next == state && emitted == 0 && matches!(event, Event::Timeout | Event::TransportFailure) {
            return Err(ReplayError::Unexplained(i));
        }
        state = next;
    }
    Ok(state)
}

/// Counterpart that follows a fixed script: announce the intent, answer the
/// challenge (optionally narrowing), and offer a proof when asked.
#[derive(Clone, Debug)]
pub struct ScriptedCounterpart {
    session_id: String,
    decl: IntentDeclaration,
    narrowed: Option<Vec<String>>,
    proof: Option<ProofOfValue>,
    outbox: VecDeque<Vec<u8>>,
    pub received: Vec<Message>,
}

impl ScriptedCounterpart {
    pub fn new(session_id: impl Into<String>, decl: IntentDeclaration, proof: Option<ProofOfValue>) -> Self {
        let session_id = session_id.into();
        let first = encode(&Message::new(session_id.clone(), Body::IntentRequest(decl.clone())));
        Self {
            session_id,
            decl,
            narrowed: None,
            proof,
            outbox: VecDeque::from([first]),
            received: Vec::new(),
        }
    }

    /// Fields to keep when answering an excessive challenge.
    pub fn narrow_to(mut self, fields: Vec<String>) -> Self {
        self.narrowed = Some(fields);
        self
    }

    fn reply(&mut self, body: Body) {
        self.outbox
            .push_back(encode(&Message::new(self.session_id.clone(), body)));
    }
}

impl Transport for ScriptedCounterpart {
    fn recv(&mut self) -> Result<Option<Vec<u8>>, TransportError> {
        Ok(self.outbox.pop_front())
    }

    fn send(&mut self, frame: &[u8]) -> Result<(), TransportError> {
        let msg = decode(frame).map_err(|e| TransportError(format!("{e}")))?;
        match &msg.body {
            Body::SemanticChallenge(verdict) => {
                let fields = match (&self.narrowed, verdict.is_minimal()) {
                    (Some(n), false) => n.clone(),
                    _ => self.decl.requested_fields.clone(),
                };
                self.reply(Body::ChallengeResponse {
                    declared_purpose: self.decl.declared_purpose.clone(),
                    requested_fields: fields,
                });
            }
            Body::NegotiationOffer { .. } => self.reply(Body::ProofOfValue(self.proof.clone())),
            _ => {}
        }
        self.received.push(msg);
        Ok(())
    }
}
