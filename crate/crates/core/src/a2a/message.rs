use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value as Json};

use crate::gatekeeper::{ChallengeVerdict, Disclosure, IntentDeclaration, ProofOfValue, Rejection, TokenCosts};
use crate::updl::Granularity;

pub const PROTOCOL_VERSION: u64 = 1;

/// Largest payload accepted by [`decode`].
pub const MAX_FRAME_LEN: usize = 1 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("malformed frame: {0}")]
    Malformed(&'static str),
    #[error("unsupported protocol version {0}")]
    VersionMismatch(u64),
    #[error("unknown message type")]
    UnknownType,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MessageType {
    IntentRequest,
    SemanticChallenge,
    ChallengeResponse,
    AutoGrant,
    NegotiationOffer,
    ProofOfValue,
    CoarsenedGrant,
    HitlPending,
    HitlDecision,
    Rejection,
    Close,
}

impl MessageType {
    pub const ALL: [MessageType; 11] = [
        MessageType::IntentRequest,
        MessageType::SemanticChallenge,
        MessageType::ChallengeResponse,
        MessageType::AutoGrant,
        MessageType::NegotiationOffer,
        MessageType::ProofOfValue,
        MessageType::CoarsenedGrant,
        MessageType::HitlPending,
        MessageType::HitlDecision,
        MessageType::Rejection,
        MessageType::Close,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MessageType::IntentRequest => "IntentRequest",
            MessageType::SemanticChallenge => "SemanticChallenge",
            MessageType::ChallengeResponse => "ChallengeResponse",
            MessageType::AutoGrant => "AutoGrant",
            MessageType::NegotiationOffer => "NegotiationOffer",
            MessageType::ProofOfValue => "ProofOfValue",
            MessageType::CoarsenedGrant => "CoarsenedGrant",
            MessageType::HitlPending => "HitlPending",
            MessageType::HitlDecision => "HitlDecision",
            MessageType::Rejection => "Rejection",
            MessageType::Close => "Close",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Body {
    IntentRequest(IntentDeclaration),
    SemanticChallenge(ChallengeVerdict),
    /// The counterpart's answer to the challenge; may narrow the field set.
    ChallengeResponse {
        declared_purpose: String,
        requested_fields: Vec<String>,
    },
    AutoGrant(Vec<Disclosure>),
    NegotiationOffer {
        sensitivity: f64,
        risk: f64,
        hard_rule: bool,
    },
    ProofOfValue(Option<ProofOfValue>),
    CoarsenedGrant(Vec<Disclosure>),
    HitlPending {
        handshake_id: String,
    },
    HitlDecision {
        approve: bool,
    },
    Rejection(Rejection),
    Close,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResponsePayload {
    declared_purpose: String,
    requested_fields: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FieldsPayload {
    fields: Vec<Disclosure>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OfferPayload {
    hard_rule: bool,
    risk: f64,
    sensitivity: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProofPayload {
    proof: Option<ProofOfValue>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PendingPayload {
    handshake_id: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DecisionPayload {
    approve: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EmptyPayload {}

fn to_json<T: Serialize>(v: &T) -> Json {
    serde_json::to_value(v).expect("payload types serialize")
}

fn from_json<T: DeserializeOwned>(v: Json) -> Result<T, DecodeError> {
    serde_json::from_value(v).map_err(|_| DecodeError::Malformed("payload does not match type"))
}

impl Body {
    pub fn message_type(&self) -> MessageType {
        match self {
            Body::IntentRequest(_) => MessageType::IntentRequest,
            Body::SemanticChallenge(_) => MessageType::SemanticChallenge,
            Body::ChallengeResponse { .. } => MessageType::ChallengeResponse,
            Body::AutoGrant(_) => MessageType::AutoGrant,
            Body::NegotiationOffer { .. } => MessageType::NegotiationOffer,
            Body::ProofOfValue(_) => MessageType::ProofOfValue,
            Body::CoarsenedGrant(_) => MessageType::CoarsenedGrant,
            Body::HitlPending { .. } => MessageType::HitlPending,
            Body::HitlDecision { .. } => MessageType::HitlDecision,
            Body::Rejection(_) => MessageType::Rejection,
            Body::Close => MessageType::Close,
        }
    }

    /// Field values carried by the message, if it is a grant.
    pub fn disclosures(&self) -> &[Disclosure] {
        match self {
            Body::AutoGrant(d) | Body::CoarsenedGrant(d) => d,
            _ => &[],
        }
    }

    fn payload(&self) -> Json {
        match self {
            Body::IntentRequest(decl) => to_json(decl),
            Body::SemanticChallenge(v) => to_json(v),
            Body::ChallengeResponse {
                declared_purpose,
                requested_fields,
            } => to_json(&ResponsePayload {
                declared_purpose: declared_purpose.clone(),
                requested_fields: requested_fields.clone(),
            }),
            Body::AutoGrant(fields) | Body::CoarsenedGrant(fields) => {
                to_json(&FieldsPayload { fields: fields.clone() })
            }
            Body::NegotiationOffer {
                sensitivity,
                risk,
                hard_rule,
            } => to_json(&OfferPayload {
                hard_rule: *hard_rule,
                risk: *risk,
                sensitivity: *sensitivity,
            }),
            Body::ProofOfValue(proof) => to_json(&ProofPayload { proof: proof.clone() }),
            Body::HitlPending { handshake_id } => to_json(&PendingPayload {
                handshake_id: handshake_id.clone(),
            }),
            Body::HitlDecision { approve } => to_json(&DecisionPayload { approve: *approve }),
            Body::Rejection(r) => to_json(r),
            Body::Close => json!({}),
        }
    }

    fn from_payload(ty: MessageType, payload: Json) -> Result<Self, DecodeError> {
        Ok(match ty {
            MessageType::IntentRequest => Body::IntentRequest(from_json(payload)?),
            MessageType::SemanticChallenge => Body::SemanticChallenge(from_json(payload)?),
            MessageType::ChallengeResponse => {
                let p: ResponsePayload = from_json(payload)?;
                Body::ChallengeResponse {
                    declared_purpose: p.declared_purpose,
                    requested_fields: p.requested_fields,
                }
            }
            MessageType::AutoGrant => Body::AutoGrant(from_json::<FieldsPayload>(payload)?.fields),
            MessageType::CoarsenedGrant => Body::CoarsenedGrant(from_json::<FieldsPayload>(payload)?.fields),
            MessageType::NegotiationOffer => {
                let p: OfferPayload = from_json(payload)?;
                Body::NegotiationOffer {
                    sensitivity: p.sensitivity,
                    risk: p.risk,
                    hard_rule: p.hard_rule,
                }
            }
            MessageType::ProofOfValue => Body::ProofOfValue(from_json::<ProofPayload>(payload)?.proof),
            MessageType::HitlPending => Body::HitlPending {
                handshake_id: from_json::<PendingPayload>(payload)?.handshake_id,
            },
            MessageType::HitlDecision => Body::HitlDecision {
                approve: from_json::<DecisionPayload>(payload)?.approve,
            },
            MessageType::Rejection => Body::Rejection(from_json(payload)?),
            MessageType::Close => {
                from_json::<EmptyPayload>(payload)?;
                Body::Close
            }
        })
    }

    /// Avatar-side token cost of emitting this message.
    pub fn avatar_tokens(&self, costs: &TokenCosts) -> u64 {
        match self {
            Body::SemanticChallenge(_) => costs.challenge,
            Body::AutoGrant(_) => costs.auto_grant,
            Body::NegotiationOffer { hard_rule, .. } => {
                costs.negotiation_offer + if *hard_rule { costs.hard_rule_notice } else { 0 }
            }
            Body::CoarsenedGrant(fields) => {
                let desensitized = fields.iter().any(|d| d.granularity > Granularity::Full);
                costs.coarsened_grant + if desensitized { costs.desensitization } else { 0 }
            }
            Body::HitlPending { .. } => costs.hitl_pending,
            Body::Rejection(_) => costs.rejection,
            _ => 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    pub session_id: String,
    pub body: Body,
}

impl Message {
    pub fn new(session_id: impl Into<String>, body: Body) -> Self {
        Self {
            session_id: session_id.into(),
            body,
        }
    }

    pub fn message_type(&self) -> MessageType {
        self.body.message_type()
    }

    /// Canonical text form: a JSON object with sorted keys.
    pub fn to_canonical(&self) -> Vec<u8> {
        let mut m = Map::new();
        m.insert("payload".into(), self.body.payload());
        m.insert("session_id".into(), Json::String(self.session_id.clone()));
        m.insert("type".into(), Json::String(self.message_type().as_str().to_string()));
        m.insert("v".into(), Json::from(PROTOCOL_VERSION));
        serde_json::to_vec(&Json::Object(m)).expect("canonical form serializes")
    }

    pub fn from_canonical(text: &[u8]) -> Result<Self, DecodeError> {
        let Ok(Json::Object(mut m)) = serde_json::from_slice::<Json>(text) else {
            return Err(DecodeError::Malformed("payload is not a JSON object"));
        };
        let version = match m.remove("v") {
            Some(Json::Number(n)) => n.as_u64().ok_or(DecodeError::Malformed("bad version"))?,
            _ => return Err(DecodeError::Malformed("missing version")),
        };
        if version != PROTOCOL_VERSION {
            return Err(DecodeError::VersionMismatch(version));
        }
        let ty = match m.remove("type") {
            Some(Json::String(s)) => MessageType::parse(&s).ok_or(DecodeError::UnknownType)?,
            _ => return Err(DecodeError::Malformed("missing type")),
        };
        let session_id = match m.remove("session_id") {
            Some(Json::String(s)) => s,
            _ => return Err(DecodeError::Malformed("missing session_id")),
        };
        let payload = m.remove("payload").ok_or(DecodeError::Malformed("missing payload"))?;
        if !m.is_empty() {
            return Err(DecodeError::Malformed("unexpected envelope key"));
        }
        Ok(Self {
            session_id,
            body: Body::from_payload(ty, payload)?,
        })
    }
}

/// Frames a message: little-endian `u32` length, then the canonical payload.
pub fn encode(msg: &Message) -> Vec<u8> {
    let payload = msg.to_canonical();
    let mut out = Vec::with_capacity(payload.len() + 4);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&payload);
    out
}

/// Decodes exactly one frame. Accepts arbitrary untrusted bytes.
pub fn decode(frame: &[u8]) -> Result<Message, DecodeError> {
    let Some((len, payload)) = frame.split_first_chunk::<4>() else {
        return Err(DecodeError::Malformed("short frame"));
    };
    let len = u32::from_le_bytes(*len) as usize;
    if len > MAX_FRAME_LEN {
        return Err(DecodeError::Malformed("frame too large"));
    }
    if payload.len() != len {
        return Err(DecodeError::Malformed("length prefix mismatch"));
    }
    Message::from_canonical(payload)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gatekeeper::RejectionCode;
    use crate::updl::{Range, Value};
    use alloc::vec;
    use rand_chacha::ChaCha20Rng;
    use rand_core::{RngCore, SeedableRng};

    fn one_of_each() -> Vec<Message> {
        let decl = IntentDeclaration {
            counterpart_id: "fintech".into(),
            declared_purpose: "portfolio_monitoring".into(),
            requested_fields: vec!["assets.portfolio".into()],
            proof_of_value: Some(ProofOfValue {
                purpose_category: "financial_service".into(),
                attestation: "att".into(),
            }),
        };
        let grant = vec![Disclosure {
            field_path: "assets.portfolio".into(),
            granularity: Granularity::Bucketed,
            value: Value::Range(Range { lo: 1e5, hi: 1e6 }),
        }];
        let bodies = vec![
            Body::IntentRequest(decl),
            Body::SemanticChallenge(ChallengeVerdict::Excessive(vec!["identity.full_profile".into()])),
            Body::ChallengeResponse {
                declared_purpose: "newsletter".into(),
                requested_fields: vec!["identity.contact".into()],
            },
            Body::AutoGrant(vec![Disclosure {
                field_path: "research.focus".into(),
                granularity: Granularity::Full,
                value: Value::List(vec![Value::text("privacy"), Value::Num(0.5)]),
            }]),
            Body::NegotiationOffer {
                sensitivity: 8.0,
                risk: 0.0,
                hard_rule: true,
            },
            Body::ProofOfValue(None),
            Body::CoarsenedGrant(grant),
            Body::HitlPending {
                handshake_id: "h-1".into(),
            },
            Body::HitlDecision { approve: false },
            Body::Rejection(Rejection {
                code: RejectionCode::Timeout,
                reason: "no answer".into(),
            }),
            Body::Close,
        ];
        bodies.into_iter().map(|b| Message::new("s-1", b)).collect()
    }

    #[test]
    fn every_type_round_trips() {
        let all = one_of_each();
        let mut types: Vec<_> = all.iter().map(|m| m.message_type()).collect();
        types.sort();
        assert_eq!(types, MessageType::ALL.to_vec());
        for m in all {
            assert_eq!(decode(&encode(&m)).unwrap(), m);
        }
    }

    #[test]
    fn frame_layout_is_length_prefixed_canonical_json() {
        let f = encode(&Message::new("s", Body::Close));
        let text = br#"{"payload":{},"session_id":"s","type":"Close","v":1}"#;
        assert_eq!(&f[..4], &(text.len() as u32).to_le_bytes());
        assert_eq!(&f[4..], text);
    }

    #[test]
    fn garbage_is_malformed() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..200 {
            let mut buf = [0u8; 256];
            rng.fill_bytes(&mut buf);
            assert!(matches!(decode(&buf), Err(DecodeError::Malformed(_))));
        }
        assert!(matches!(decode(&[1, 0]), Err(DecodeError::Malformed(_))));
    }

    #[test]
    fn version_and_type_errors() {
        let frame = encode(&Message::new("s", Body::HitlDecision { approve: true }));
        let text = core::str::from_utf8(&frame[4..]).unwrap();
        let bumped = text.replace("\"v\":1", "\"v\":2");
        assert_eq!(
            Message::from_canonical(bumped.as_bytes()),
            Err(DecodeError::VersionMismatch(2))
        );
        let renamed = text.replace("HitlDecision", "HitlOverride");
        assert_eq!(
            Message::from_canonical(renamed.as_bytes()),
            Err(DecodeError::UnknownType)
        );
        let extra = text.replace("\"approve\":true", "\"approve\":true,\"fields\":[]");
        assert!(matches!(
            Message::from_canonical(extra.as_bytes()),
            Err(DecodeError::Malformed(_))
        ));
    }

    #[test]
    fn token_costs_follow_emissions() {
        let c = TokenCosts::default();
        let offer = Body::NegotiationOffer {
            sensitivity: 8.0,
            risk: 0.0,
            hard_rule: true,
        };
        assert_eq!(offer.avatar_tokens(&c), c.negotiation_offer + c.hard_rule_notice);
        assert_eq!(Body::Close.avatar_tokens(&c), 0);
        let all = one_of_each();
        assert_eq!(all[6].body.avatar_tokens(&c), c.coarsened_grant + c.desensitization);
    }
}
