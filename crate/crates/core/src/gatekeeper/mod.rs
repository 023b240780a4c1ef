//! Compute-layer decision core.
//!
//! A request passes through three gates: a semantic challenge checks that
//! the requested fields are the minimum the declared purpose needs, the
//! fields are scored against the ontology to get the sensitivity `R`, and
//! the dual-factor router combines `R` with the user's strictness `S` into
//! one of three zones.

mod audit;
mod challenge;
mod negotiate;

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::pod::PodError;
use crate::updl::{is_valid_path, SensitivityOntology, UpdlError};

pub use audit::{verify_audit_chain, verify_audit_log, AuditLog, AuditRecord, AuditVerdict, GENESIS_HASH};
pub use challenge::{semantic_challenge, ChallengeVerdict, PurposeEntry, PurposeTable};
pub use negotiate::{
    assess_proof, release, Disclosure, FieldSource, HitlPort, HitlRequest, HitlVerdict, Negotiation,
    NegotiationOutcome, RequestedField,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GatekeeperError {
    #[error("value out of domain: {0}")]
    Domain(String),
    #[error(transparent)]
    Schema(#[from] UpdlError),
    #[error(transparent)]
    Session(#[from] PodError),
    #[error("negotiation requires a Negotiate decision, got {0:?}")]
    NotNegotiable(Zone),
    #[error("invalid policy: {0}")]
    InvalidPolicy(&'static str),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofOfValue {
    pub purpose_category: String,
    pub attestation: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntentDeclaration {
    pub counterpart_id: String,
    pub declared_purpose: String,
    pub requested_fields: Vec<String>,
    #[serde(default)]
    pub proof_of_value: Option<ProofOfValue>,
}

impl IntentDeclaration {
    pub fn fields_are_valid(&self) -> bool {
        self.requested_fields.iter().all(|f| is_valid_path(f))
    }
}

/// Ordered from least to most restrictive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Zone {
    Auto,
    Negotiate,
    Block,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Policy {
    pub strictness: u8,
    pub auto_threshold: f64,
    pub block_threshold: f64,
    pub hard_rule_threshold: f64,
}

impl Default for Policy {
    fn default() -> Self {
        Self {
            strictness: 5,
            auto_threshold: 25.0,
            block_threshold: 80.0,
            hard_rule_threshold: 8.0,
        }
    }
}

impl Policy {
    pub fn with_strictness(strictness: u8) -> Self {
        Self {
            strictness,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), GatekeeperError> {
        if self.strictness > 10 {
            return Err(GatekeeperError::InvalidPolicy("strictness must be 0-10"));
        }
        let ordered =
            0.0 <= self.auto_threshold && self.auto_threshold <= self.block_threshold && self.block_threshold <= 100.0;
        if !ordered {
            return Err(GatekeeperError::InvalidPolicy(
                "thresholds must satisfy 0 <= auto <= block <= 100",
            ));
        }
        if !(0.0..=10.0).contains(&self.hard_rule_threshold) {
            return Err(GatekeeperError::InvalidPolicy("hard rule threshold must be 0-10"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub zone: Zone,
    pub sensitivity: f64,
    pub strictness: f64,
    pub risk: f64,
    pub hard_rule_triggered: bool,
    pub rationale: String,
}

/// Request sensitivity: the most sensitive requested field wins; an empty
/// request scores 0.
pub fn compute_sensitivity(requested_fields: &[String], ontology: &SensitivityOntology) -> Result<u8, UpdlError> {
    requested_fields
        .iter()
        .map(|f| ontology.classify_sensitivity(f))
        .try_fold(0u8, |acc, level| level.map(|l| acc.max(l)))
}

/// Dual-factor routing on the risk score `S × R`.
///
/// Block when the risk reaches the block threshold; otherwise negotiate
/// when the risk reaches the auto threshold or `R` reaches the hard rule;
/// otherwise answer automatically.
pub fn route(strictness: f64, sensitivity: f64, policy: &Policy) -> Result<RoutingDecision, GatekeeperError> {
    for (name, v) in [("strictness", strictness), ("sensitivity", sensitivity)] {
        if !(0.0..=10.0).contains(&v) {
            return Err(GatekeeperError::Domain(alloc::format!("{name} {v} outside [0, 10]")));
        }
    }
    let risk = strictness * sensitivity;
    let hard = sensitivity >= policy.hard_rule_threshold;
    let (zone, rationale) = if risk >= policy.block_threshold {
        (
            Zone::Block,
            alloc::format!("risk {risk} >= block threshold {}", policy.block_threshold),
        )
    } else if risk >= policy.auto_threshold {
        (
            Zone::Negotiate,
            alloc::format!("risk {risk} >= auto threshold {}", policy.auto_threshold),
        )
    } else if hard {
        (
            Zone::Negotiate,
            alloc::format!(
                "hard rule: sensitivity {sensitivity} >= {} despite risk {risk}",
                policy.hard_rule_threshold
            ),
        )
    } else {
        (
            Zone::Auto,
            alloc::format!("risk {risk} below auto threshold {}", policy.auto_threshold),
        )
    };
    Ok(RoutingDecision {
        zone,
        sensitivity,
        strictness,
        risk,
        hard_rule_triggered: hard && risk < policy.auto_threshold,
        rationale,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionCode {
    Blocked,
    HitlDenied,
    ProtocolViolation,
    Timeout,
    UnknownField,
    TransportFailure,
}

/// Standardized rejection signal. Carries no field values.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rejection {
    pub code: RejectionCode,
    pub reason: String,
}

/// Avatar-side token cost of each message the avatar emits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenCosts {
    pub challenge: u64,
    pub auto_grant: u64,
    pub negotiation_offer: u64,
    /// Extra justification attached to an offer forced by the hard rule.
    pub hard_rule_notice: u64,
    pub coarsened_grant: u64,
    /// Added to a grant whose values were coarsened before release.
    pub desensitization: u64,
    pub hitl_pending: u64,
    pub rejection: u64,
}

impl Default for TokenCosts {
    fn default() -> Self {
        Self {
            challenge: 96,
            auto_grant: 812,
            negotiation_offer: 640,
            hard_rule_notice: 58,
            coarsened_grant: 812,
            desensitization: 345,
            hitl_pending: 72,
            rejection: 64,
        }
    }
}

/// Result of the challenge and routing gates for one request.
#[derive(Clone, Debug, PartialEq)]
pub struct Assessment {
    pub challenge: ChallengeVerdict,
    pub decision: RoutingDecision,
}

/// One avatar's gatekeeper: policy, ontology, purposes and audit log.
#[derive(Clone, Debug)]
pub struct Gatekeeper {
    pub ontology: SensitivityOntology,
    pub purposes: PurposeTable,
    pub policy: Policy,
    pub costs: TokenCosts,
    pub audit: AuditLog,
}

impl Gatekeeper {
    pub fn new(ontology: SensitivityOntology, purposes: PurposeTable, policy: Policy) -> Result<Self, GatekeeperError> {
        policy.validate()?;
        Ok(Self {
            ontology,
            purposes,
            policy,
            costs: TokenCosts::default(),
            audit: AuditLog::default(),
        })
    }

    pub fn with_defaults(policy: Policy) -> Result<Self, GatekeeperError> {
        Self::new(
            SensitivityOntology::default_ontology(),
            PurposeTable::default_table(),
            policy,
        )
    }

    pub fn assess(&self, decl: &IntentDeclaration) -> Result<Assessment, GatekeeperError> {
        if !decl.fields_are_valid() {
            return Err(GatekeeperError::Domain("malformed field path".into()));
        }
        let challenge = semantic_challenge(decl, &self.purposes);
        let r = compute_sensitivity(&decl.requested_fields, &self.ontology)?;
        let decision = route(f64::from(self.policy.strictness), f64::from(r), &self.policy)?;
        Ok(Assessment { challenge, decision })
    }

    /// Runs the negotiation subroutine for a request already routed to
    /// the Negotiate zone. Every released value goes through `coarsen`.
    pub fn negotiate(
        &mut self,
        source: &dyn FieldSource,
        decl: &IntentDeclaration,
        decision: &RoutingDecision,
        hitl: &mut dyn HitlPort,
        handshake_id: &str,
    ) -> Result<Negotiation, GatekeeperError> {
        negotiate::negotiate(self, source, decl, decision, hitl, handshake_id)
    }

    /// Immediate circuit break: a payload-free rejection plus one audit record.
    pub fn block(&mut self, decl: &IntentDeclaration, now: u64) -> (Rejection, AuditRecord) {
        let rejection = Rejection {
            code: RejectionCode::Blocked,
            reason: "request refused by policy".into(),
        };
        let record = self
            .audit
            .append(
                now,
                &decl.counterpart_id,
                "zone=Block outcome=Reject",
                &decl.requested_fields,
            )
            .clone();
        (rejection, record)
    }
}
