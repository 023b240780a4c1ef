use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{
    Gatekeeper, GatekeeperError, IntentDeclaration, Policy, ProofOfValue, PurposeTable, RoutingDecision, Zone,
};
use crate::pod::{PodError, PodSession};
use crate::updl::{coarsen, Granularity, ProfileNode, SensitivityOntology, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", content = "granularity")]
pub enum NegotiationOutcome {
    GrantFull,
    GrantCoarsened(Granularity),
    EscalateHitl,
    Reject,
}

impl NegotiationOutcome {
    pub fn release_level(self) -> Option<Granularity> {
        match self {
            NegotiationOutcome::GrantFull => Some(Granularity::Full),
            NegotiationOutcome::GrantCoarsened(g) => Some(g),
            NegotiationOutcome::EscalateHitl | NegotiationOutcome::Reject => None,
        }
    }
}

/// A field value as it leaves the avatar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disclosure {
    pub field_path: String,
    pub granularity: Granularity,
    pub value: Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Negotiation {
    pub outcome: NegotiationOutcome,
    pub escalated: bool,
    pub disclosure: Vec<Disclosure>,
    pub tokens_spent: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestedField {
    pub path: String,
    pub sensitivity: u8,
}

/// Metadata shown to the human for a binary decision. Never holds values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HitlRequest {
    pub handshake_id: String,
    pub counterpart_id: String,
    pub declared_purpose: String,
    pub fields: Vec<RequestedField>,
    pub sensitivity: f64,
}

impl HitlRequest {
    pub fn new(
        handshake_id: &str,
        decl: &IntentDeclaration,
        decision: &RoutingDecision,
        ontology: &SensitivityOntology,
    ) -> Self {
        Self {
            handshake_id: handshake_id.into(),
            counterpart_id: decl.counterpart_id.clone(),
            declared_purpose: decl.declared_purpose.clone(),
            fields: decl
                .requested_fields
                .iter()
                .map(|f| RequestedField {
                    path: f.clone(),
                    sensitivity: ontology.classify_sensitivity(f).unwrap_or(10),
                })
                .collect(),
            sensitivity: decision.sensitivity,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HitlVerdict {
    Approve,
    Deny,
    Timeout,
}

/// Source of binary human decisions for escalated negotiations.
pub trait HitlPort {
    fn decide(&mut self, request: &HitlRequest) -> HitlVerdict;
}

impl<F: FnMut(&HitlRequest) -> HitlVerdict> HitlPort for F {
    fn decide(&mut self, request: &HitlRequest) -> HitlVerdict {
        self(request)
    }
}

/// Read access to profile nodes for releasing granted values.
pub trait FieldSource {
    fn field(&self, field_path: &str) -> Result<Option<ProfileNode>, PodError>;

    fn ensure_open(&self) -> Result<(), PodError> {
        Ok(())
    }
}

impl FieldSource for PodSession {
    fn field(&self, field_path: &str) -> Result<Option<ProfileNode>, PodError> {
        Ok(self.node(field_path)?.cloned())
    }

    fn ensure_open(&self) -> Result<(), PodError> {
        self.graph().map(|_| ())
    }
}

/// Verifies a proof of value against the purpose table. A proof is valid
/// when it names the purpose's category, carries a non-empty attestation,
/// and every requested field is allowed for the purpose.
pub fn assess_proof(
    decl: &IntentDeclaration,
    proof: Option<&ProofOfValue>,
    decision: &RoutingDecision,
    purposes: &PurposeTable,
    policy: &Policy,
) -> NegotiationOutcome {
    let valid = match (proof, purposes.get(&decl.declared_purpose)) {
        (Some(p), Some(entry)) => {
            !p.attestation.is_empty()
                && p.purpose_category == entry.category
                && decl.requested_fields.iter().all(|f| entry.allows(f))
        }
        _ => false,
    };
    if !valid {
        NegotiationOutcome::EscalateHitl
    } else if decision.sensitivity >= policy.hard_rule_threshold {
        NegotiationOutcome::GrantCoarsened(Granularity::Bucketed)
    } else {
        NegotiationOutcome::GrantFull
    }
}

/// Looks up and coarsens each requested field to at least `level`.
/// Fields absent from the pod are skipped.
pub fn release(
    source: &dyn FieldSource,
    fields: &[String],
    level: Granularity,
    ontology: &SensitivityOntology,
) -> Result<Vec<Disclosure>, GatekeeperError> {
    source.ensure_open()?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for path in fields {
        if !seen.insert(path.as_str()) {
            continue;
        }
        let Some(node) = source.field(path)? else {
            continue;
        };
        let target = level.max(node.granularity);
        let released = coarsen(&node, target, ontology)?;
        out.push(Disclosure {
            field_path: released.field_path,
            granularity: released.granularity,
            value: released.value,
        });
    }
    Ok(out)
}

pub(super) fn negotiate(
    gk: &mut Gatekeeper,
    source: &dyn FieldSource,
    decl: &IntentDeclaration,
    decision: &RoutingDecision,
    hitl: &mut dyn HitlPort,
    handshake_id: &str,
) -> Result<Negotiation, GatekeeperError> {
    if decision.zone != Zone::Negotiate {
        return Err(GatekeeperError::NotNegotiable(decision.zone));
    }
    source.ensure_open()?;
    let costs = &gk.costs;
    let mut tokens = costs.negotiation_offer;
    if decision.hard_rule_triggered {
        tokens += costs.hard_rule_notice;
    }

    let mut outcome = assess_proof(decl, decl.proof_of_value.as_ref(), decision, &gk.purposes, &gk.policy);
    let escalated = outcome == NegotiationOutcome::EscalateHitl;
    if escalated {
        tokens += costs.hitl_pending;
        let request = HitlRequest::new(handshake_id, decl, decision, &gk.ontology);
        outcome = match hitl.decide(&request) {
            HitlVerdict::Approve => NegotiationOutcome::GrantCoarsened(Granularity::Category),
            HitlVerdict::Deny | HitlVerdict::Timeout => NegotiationOutcome::Reject,
        };
    }

    let disclosure = match outcome.release_level() {
        Some(level) => {
            tokens += costs.coarsened_grant;
            if level > Granularity::Full {
                tokens += costs.desensitization;
            }
            release(source, &decl.requested_fields, level, &gk.ontology)?
        }
        None => {
            tokens += costs.rejection;
            Vec::new()
        }
    };
    Ok(Negotiation {
        outcome,
        escalated,
        disclosure,
        tokens_spent: tokens,
    })
}
