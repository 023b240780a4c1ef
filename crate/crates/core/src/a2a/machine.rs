use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::message::{Body, Message};
use crate::gatekeeper::{
    assess_proof, compute_sensitivity, release, route, semantic_challenge, ChallengeVerdict, FieldSource,
    IntentDeclaration, NegotiationOutcome, Policy, PurposeTable, Rejection, RejectionCode, RoutingDecision, Zone,
};
use crate::updl::{Granularity, SensitivityOntology};

/// Virtual seconds a non-terminal state waits before timing out.
pub const DEFAULT_TIMEOUT_SECS: u64 = 30;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    #[default]
    Idle,
    ChallengeIssued,
    Assessed,
    Negotiating,
    AwaitingHitl,
    Granted,
    Blocked,
    Closed,
}

impl Phase {
    pub const ALL: [Phase; 8] = [
        Phase::Idle,
        Phase::ChallengeIssued,
        Phase::Assessed,
        Phase::Negotiating,
        Phase::AwaitingHitl,
        Phase::Granted,
        Phase::Blocked,
        Phase::Closed,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Granted | Phase::Blocked | Phase::Closed)
    }
}

/// Handshake state plus the context accumulated so far.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HandshakeState {
    pub phase: Phase,
    pub session_id: Option<String>,
    pub decl: Option<IntentDeclaration>,
    pub challenge: Option<ChallengeVerdict>,
    pub decision: Option<RoutingDecision>,
    /// Outcome of the negotiation subroutine, once known.
    pub outcome: Option<NegotiationOutcome>,
    pub escalated: bool,
}

impl HandshakeState {
    pub fn idle() -> Self {
        Self::default()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Event {
    Inbound(Message),
    /// A frame arrived that did not decode.
    Invalid,
    Timeout,
    TransportFailure,
    /// Internal tick that lets an assessed request leave `Assessed`.
    Proceed,
}

/// Read-only inputs for [`step`].
#[derive(Clone, Copy)]
pub struct StepContext<'a> {
    pub ontology: &'a SensitivityOntology,
    pub purposes: &'a PurposeTable,
    pub policy: &'a Policy,
    pub source: &'a dyn FieldSource,
}

fn reject(code: RejectionCode, reason: &str) -> Body {
    Body::Rejection(Rejection {
        code,
        reason: reason.into(),
    })
}

/// Handshake transition function. Total: protocol violations become
/// `Blocked` with a rejection, never errors.
pub fn step(state: &HandshakeState, event: &Event, ctx: &StepContext<'_>) -> (HandshakeState, Vec<Message>) {
    let mut next = state.clone();
    let sid = state.session_id.clone().unwrap_or_default();

    let block = |mut next: HandshakeState, code: RejectionCode, reason: &str, sid: String| {
        next.phase = Phase::Blocked;
        (next, vec![Message::new(sid, reject(code, reason))])
    };

    match state.phase {
        Phase::Closed => return (next, Vec::new()),
        Phase::Blocked => {
            if let Event::Inbound(Message { body: Body::Close, .. }) = event {
                if state.session_id.is_none() || event_sid(event) == state.session_id.as_deref() {
                    next.phase = Phase::Closed;
                }
            }
            return (next, Vec::new());
        }
        _ => {}
    }

    let msg = match event {
        Event::Proceed => {
            if state.phase != Phase::Assessed {
                return (next, Vec::new());
            }
            return proceed(next, sid, ctx);
        }
        Event::Timeout => {
            if state.phase.is_terminal() {
                return (next, Vec::new());
            }
            return block(
                next,
                RejectionCode::Timeout,
                "no response within the state timeout",
                sid,
            );
        }
        Event::TransportFailure => {
            if state.phase.is_terminal() {
                return (next, Vec::new());
            }
            return block(next, RejectionCode::TransportFailure, "transport failed", sid);
        }
        Event::Invalid => return block(next, RejectionCode::ProtocolViolation, "undecodable frame", sid),
        Event::Inbound(m) => m,
    };

    if state.phase == Phase::Idle {
        if let Body::IntentRequest(decl) = &msg.body {
            next.session_id = Some(msg.session_id.clone());
            if !decl.fields_are_valid() {
                return block(
                    next,
                    RejectionCode::UnknownField,
                    "malformed field path",
                    msg.session_id.clone(),
                );
            }
            let verdict = semantic_challenge(decl, ctx.purposes);
            next.phase = Phase::ChallengeIssued;
            next.decl = Some(decl.clone());
            next.challenge = Some(verdict.clone());
            return (
                next,
                vec![Message::new(msg.session_id.clone(), Body::SemanticChallenge(verdict))],
            );
        }
        return block(
            next,
            RejectionCode::ProtocolViolation,
            "expected an intent request",
            msg.session_id.clone(),
        );
    }

    if Some(msg.session_id.as_str()) != state.session_id.as_deref() {
        return block(next, RejectionCode::ProtocolViolation, "session id changed", sid);
    }
    if msg.body == Body::Close {
        next.phase = Phase::Closed;
        return (next, Vec::new());
    }

    match (state.phase, &msg.body) {
        (
            Phase::ChallengeIssued,
            Body::ChallengeResponse {
                declared_purpose,
                requested_fields,
            },
        ) => {
            let Some(original) = state.decl.as_ref() else {
                return block(next, RejectionCode::ProtocolViolation, "no recorded intent", sid);
            };
            let narrows = declared_purpose == &original.declared_purpose
                && requested_fields.iter().all(|f| original.requested_fields.contains(f));
            if !narrows {
                return block(
                    next,
                    RejectionCode::ProtocolViolation,
                    "response widens the request",
                    sid,
                );
            }
            let mut decl = original.clone();
            decl.requested_fields = requested_fields.clone();
            let Ok(r) = compute_sensitivity(&decl.requested_fields, ctx.ontology) else {
                return block(next, RejectionCode::UnknownField, "unclassifiable field", sid);
            };
            let Ok(decision) = route(f64::from(ctx.policy.strictness), f64::from(r), ctx.policy) else {
                return block(next, RejectionCode::ProtocolViolation, "routing failed", sid);
            };
            next.challenge = Some(semantic_challenge(&decl, ctx.purposes));
            next.decl = Some(decl);
            next.decision = Some(decision);
            next.phase = Phase::Assessed;
            (next, Vec::new())
        }
        (Phase::Negotiating, Body::ProofOfValue(proof)) => {
            let (Some(decl), Some(decision)) = (state.decl.as_ref(), state.decision.as_ref()) else {
                return block(next, RejectionCode::ProtocolViolation, "no recorded assessment", sid);
            };
            let outcome = assess_proof(decl, proof.as_ref(), decision, ctx.purposes, ctx.policy);
            match outcome.release_level() {
                Some(level) => grant(next, outcome, level, sid, ctx, true),
                None => {
                    next.phase = Phase::AwaitingHitl;
                    next.outcome = Some(NegotiationOutcome::EscalateHitl);
                    next.escalated = true;
                    (
                        next,
                        vec![Message::new(sid.clone(), Body::HitlPending { handshake_id: sid })],
                    )
                }
            }
        }
        (Phase::AwaitingHitl, Body::HitlDecision { approve: true }) => {
            let level = Granularity::Category;
            grant(next, NegotiationOutcome::GrantCoarsened(level), level, sid, ctx, true)
        }
        (Phase::AwaitingHitl, Body::HitlDecision { approve: false }) => {
            next.outcome = Some(NegotiationOutcome::Reject);
            block(next, RejectionCode::HitlDenied, "denied by the user", sid)
        }
        _ => block(next, RejectionCode::ProtocolViolation, "unexpected message", sid),
    }
}

fn event_sid(event: &Event) -> Option<&str> {
    match event {
        Event::Inbound(m) => Some(m.session_id.as_str()),
        _ => None,
    }
}

fn proceed(mut next: HandshakeState, sid: String, ctx: &StepContext<'_>) -> (HandshakeState, Vec<Message>) {
    let Some(decision) = next.decision.as_ref() else {
        next.phase = Phase::Blocked;
        return (
            next,
            vec![Message::new(
                sid,
                reject(RejectionCode::ProtocolViolation, "no recorded assessment"),
            )],
        );
    };
    match decision.zone {
        Zone::Auto => grant(next, NegotiationOutcome::GrantFull, Granularity::Full, sid, ctx, false),
        Zone::Negotiate => {
            let offer = Body::NegotiationOffer {
                sensitivity: decision.sensitivity,
                risk: decision.risk,
                hard_rule: decision.hard_rule_triggered,
            };
            next.phase = Phase::Negotiating;
            (next, vec![Message::new(sid, offer)])
        }
        Zone::Block => {
            next.phase = Phase::Blocked;
            next.outcome = Some(NegotiationOutcome::Reject);
            (
                next,
                vec![Message::new(
                    sid,
                    reject(RejectionCode::Blocked, "request refused by policy"),
                )],
            )
        }
    }
}

fn grant(
    mut next: HandshakeState,
    outcome: NegotiationOutcome,
    level: Granularity,
    sid: String,
    ctx: &StepContext<'_>,
    coarsened: bool,
) -> (HandshakeState, Vec<Message>) {
    let released = match next.decl.as_ref() {
        Some(decl) => release(ctx.source, &decl.requested_fields, level, ctx.ontology),
        None => Ok(Vec::new()),
    };
    match released {
        Ok(disclosure) => {
            next.phase = Phase::Granted;
            next.outcome = Some(outcome);
            let body = if coarsened {
                Body::CoarsenedGrant(disclosure)
            } else {
                Body::AutoGrant(disclosure)
            };
            (next, vec![Message::new(sid, body)])
        }
        Err(_) => {
            next.phase = Phase::Blocked;
            next.outcome = Some(NegotiationOutcome::Reject);
            (
                next,
                vec![Message::new(sid, reject(RejectionCode::Blocked, "profile unavailable"))],
            )
        }
    }
}
