use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};

use super::{Granularity, UpdlError};

/// Rewrite applied to a value when it is coarsened to a given level.
///
/// Variants are ordered from most to least informative; a class's rules
/// must never become more informative as the granularity level rises.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum RedactionRule {
    Identity,
    /// Numbers become order-of-magnitude ranges, text becomes initials.
    Bucketize,
    CategoryOnly,
    Placeholder,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassEntry {
    pub level: u8,
    /// Rules for granularity 1, 2 and 3.
    pub rules: [RedactionRule; 3],
}

impl ClassEntry {
    pub fn rule_for(&self, granularity: Granularity) -> RedactionRule {
        match granularity {
            Granularity::Full => RedactionRule::Identity,
            g => self.rules[g.as_u8() as usize - 1],
        }
    }
}

pub const DEFAULT_RULES: [RedactionRule; 3] = [
    RedactionRule::Bucketize,
    RedactionRule::CategoryOnly,
    RedactionRule::Placeholder,
];

/// Maps ontology classes to base sensitivity levels and redaction tables.
///
/// Class names are dotted paths. A field path resolves to the longest class
/// that equals it or is one of its dot-separated prefixes, so
/// `assets.portfolio.total` falls under `assets.portfolio`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SensitivityOntology {
    name: String,
    version: u32,
    classes: BTreeMap<String, ClassEntry>,
}

impl SensitivityOntology {
    pub fn new(name: impl Into<String>, version: u32) -> Self {
        Self {
            name: name.into(),
            version,
            classes: BTreeMap::new(),
        }
    }

    pub fn with_class(mut self, class: &str, level: u8, rules: [RedactionRule; 3]) -> Result<Self, UpdlError> {
        self.insert_class(class, level, rules)?;
        Ok(self)
    }

    pub fn insert_class(&mut self, class: &str, level: u8, rules: [RedactionRule; 3]) -> Result<(), UpdlError> {
        if !super::is_valid_path(class) {
            return Err(UpdlError::InvalidPath(class.to_string()));
        }
        if level > 10 {
            return Err(UpdlError::Schema(alloc::format!(
                "class `{class}` has level {level}, expected 0-10"
            )));
        }
        if rules.windows(2).any(|w| w[0] > w[1]) {
            return Err(UpdlError::Schema(alloc::format!(
                "redaction rules for `{class}` are not monotone"
            )));
        }
        self.classes.insert(class.to_string(), ClassEntry { level, rules });
        Ok(())
    }

    /// The shipped ontology, calibrated so the three reference agent
    /// archetypes request fields at levels 9, 8 and 2.
    pub fn default_ontology() -> Self {
        let mut o = Self::new("updl-default", 1);
        let table: &[(&str, u8)] = &[
            ("credentials", 10),
            ("credentials.api_key", 10),
            ("assets", 9),
            ("assets.portfolio", 9),
            ("identity", 8),
            ("identity.full_profile", 8),
            ("identity.legal_name", 7),
            ("identity.contact", 6),
            ("identity.status", 4),
            ("network", 4),
            ("research", 3),
            ("research.focus", 3),
            ("research.publications", 2),
            ("preferences", 2),
            ("preferences.public_interests", 2),
            ("preferences.hobbies", 3),
            ("user", 1),
        ];
        for (class, level) in table {
            o.insert_class(class, *level, DEFAULT_RULES)
                .expect("default ontology is well-formed");
        }
        o
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn contains(&self, class: &str) -> bool {
        self.classes.contains_key(class)
    }

    pub fn entry(&self, class: &str) -> Option<&ClassEntry> {
        self.classes.get(class)
    }

    pub fn classes(&self) -> impl Iterator<Item = (&str, &ClassEntry)> {
        self.classes.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Longest class that equals `field_path` or is a dotted prefix of it.
    pub fn resolve_class(&self, field_path: &str) -> Option<&str> {
        let mut candidate = field_path;
        loop {
            if let Some((k, _)) = self.classes.get_key_value(candidate) {
                return Some(k.as_str());
            }
            candidate = &candidate[..candidate.rfind('.')?];
        }
    }

    pub fn classify_sensitivity(&self, field_path: &str) -> Result<u8, UpdlError> {
        let class = self
            .resolve_class(field_path)
            .ok_or_else(|| UpdlError::UnknownClass(field_path.to_string()))?;
        Ok(self.classes[class].level)
    }
}

impl Default for SensitivityOntology {
    fn default() -> Self {
        Self::default_ontology()
    }
}

pub fn classify_sensitivity(field_path: &str, ontology: &SensitivityOntology) -> Result<u8, UpdlError> {
    ontology.classify_sensitivity(field_path)
}
