//! Hash-chained audit log. Each record commits to its predecessor's hash;
//! the persisted form is one canonical JSON object per line.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value as Json};

use crate::digest::sha256_hex;

pub const GENESIS_HASH: &str = "0000000000000000000000000000000000000000000000000000000000000000";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditRecord {
    pub seq: u64,
    pub timestamp: u64,
    pub counterpart_id: String,
    pub decision: String,
    pub fields: Vec<String>,
    pub prev_hash: String,
    pub hash: String,
}

impl AuditRecord {
    fn body(&self) -> Map<String, Json> {
        let mut m = Map::new();
        m.insert("counterpart_id".into(), Json::String(self.counterpart_id.clone()));
        m.insert("decision".into(), Json::String(self.decision.clone()));
        m.insert(
            "fields".into(),
            Json::Array(self.fields.iter().cloned().map(Json::String).collect()),
        );
        m.insert("prev_hash".into(), Json::String(self.prev_hash.clone()));
        m.insert("seq".into(), Json::from(self.seq));
        m.insert("timestamp".into(), Json::from(self.timestamp));
        m
    }

    pub fn compute_hash(&self) -> String {
        let bytes = serde_json::to_vec(&Json::Object(self.body())).expect("serializable");
        sha256_hex(&bytes)
    }

    /// Canonical line form, without the trailing newline.
    pub fn to_line(&self) -> String {
        let mut m = self.body();
        m.insert("hash".into(), Json::String(self.hash.clone()));
        serde_json::to_string(&Json::Object(m)).expect("serializable")
    }

    pub fn from_line(line: &str) -> Option<Self> {
        serde_json::from_str(line).ok()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AuditLog {
    records: Vec<AuditRecord>,
}

impl AuditLog {
    /// Adopts existing records; fails with the first bad index if the
    /// chain does not verify.
    pub fn from_records(records: Vec<AuditRecord>) -> Result<Self, usize> {
        match verify_audit_chain(&records) {
            AuditVerdict::Valid => Ok(Self { records }),
            AuditVerdict::FirstBad(i) => Err(i),
        }
    }

    pub fn records(&self) -> &[AuditRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn head_hash(&self) -> &str {
        self.records.last().map_or(GENESIS_HASH, |r| r.hash.as_str())
    }

    pub fn append(&mut self, timestamp: u64, counterpart_id: &str, decision: &str, fields: &[String]) -> &AuditRecord {
        let mut record = AuditRecord {
            seq: self.records.len() as u64,
            timestamp,
            counterpart_id: counterpart_id.to_string(),
            decision: decision.to_string(),
            fields: fields.to_vec(),
            prev_hash: self.head_hash().to_string(),
            hash: String::new(),
        };
        record.hash = record.compute_hash();
        self.records.push(record);
        self.records.last().expect("just pushed")
    }

    /// Line-delimited persisted form, one record per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.to_line());
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AuditVerdict {
    Valid,
    FirstBad(usize),
}

/// Recomputes every hash and link; reports the first record that fails.
pub fn verify_audit_chain(records: &[AuditRecord]) -> AuditVerdict {
    let mut prev = GENESIS_HASH;
    for (i, r) in records.iter().enumerate() {
        if r.seq != i as u64 || r.prev_hash != prev || r.hash != r.compute_hash() {
            return AuditVerdict::FirstBad(i);
        }
        prev = &r.hash;
    }
    AuditVerdict::Valid
}

/// Verifies a persisted log. A line must parse and be byte-identical to
/// its canonical form, so formatting-only edits are caught as well.
pub fn verify_audit_log(text: &str) -> AuditVerdict {
    let mut prev = String::from(GENESIS_HASH);
    for (i, line) in text.split_terminator('\n').enumerate() {
        match AuditRecord::from_line(line) {
            Some(r)
                if r.seq == i as u64 && r.prev_hash == prev && r.to_line() == line && r.hash == r.compute_hash() =>
            {
                prev = r.hash
            }
            _ => return AuditVerdict::FirstBad(i),
        }
    }
    AuditVerdict::Valid
}
