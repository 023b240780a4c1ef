use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::IntentDeclaration;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PurposeEntry {
    /// Category a proof of value must name for this purpose.
    pub category: String,
    /// Field paths (or dotted prefixes) the purpose legitimately needs.
    pub allowed_fields: BTreeSet<String>,
}

impl PurposeEntry {
    pub fn allows(&self, field: &str) -> bool {
        self.allowed_fields.iter().any(|allowed| {
            field == allowed
                || (field.len() > allowed.len()
                    && field.starts_with(allowed.as_str())
                    && field.as_bytes()[allowed.len()] == b'.')
        })
    }
}

/// Declarative minimum-necessity table: purpose name to entry.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PurposeTable(BTreeMap<String, PurposeEntry>);

impl PurposeTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, purpose: &str, category: &str, fields: &[&str]) -> Self {
        self.0.insert(
            purpose.to_string(),
            PurposeEntry {
                category: category.to_string(),
                allowed_fields: fields.iter().map(|f| f.to_string()).collect(),
            },
        );
        self
    }

    pub fn get(&self, purpose: &str) -> Option<&PurposeEntry> {
        self.0.get(purpose)
    }

    pub fn default_table() -> Self {
        Self::new()
            .with("portfolio_monitoring", "financial_service", &["assets.portfolio"])
            .with(
                "literature_recommendation",
                "academic_service",
                &[
                    "preferences.public_interests",
                    "research.publications",
                    "research.focus",
                ],
            )
            .with(
                "study_notes",
                "academic_service",
                &["preferences.public_interests", "research"],
            )
            .with("newsletter", "marketing", &["identity.contact"])
            .with("dependency_audit", "security_service", &["research.focus"])
            .with(
                "personal_introduction",
                "profile_service",
                &[
                    "identity.legal_name",
                    "identity.status",
                    "research",
                    "preferences.hobbies",
                ],
            )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "surplus", rename_all = "snake_case")]
pub enum ChallengeVerdict {
    Minimal,
    Excessive(Vec<String>),
}

impl ChallengeVerdict {
    pub fn is_minimal(&self) -> bool {
        matches!(self, ChallengeVerdict::Minimal)
    }
}

/// Requested fields the declared purpose does not justify. An unknown
/// purpose justifies nothing.
pub fn semantic_challenge(decl: &IntentDeclaration, purposes: &PurposeTable) -> ChallengeVerdict {
    let entry = purposes.get(&decl.declared_purpose);
    let surplus: Vec<String> = decl
        .requested_fields
        .iter()
        .filter(|f| !entry.is_some_and(|e| e.allows(f)))
        .cloned()
        .collect();
    if surplus.is_empty() {
        ChallengeVerdict::Minimal
    } else {
        ChallengeVerdict::Excessive(surplus)
    }
}
