//! Universal Profile Description Language.
//!
//! A profile is a small semantic graph: attribute nodes keyed by dotted
//! field paths, typed relations between them, and a sensitivity ontology
//! that assigns every node a base level and a redaction table. The
//! canonical document form is JSON with sorted keys and no insignificant
//! whitespace, so equal graphs always serialize to equal bytes.

mod coarsen;
mod codec;
mod ontology;
mod value;

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

pub use coarsen::{bucket_number, coarsen, initials};
pub use codec::{parse, serialize};
pub use ontology::{classify_sensitivity, ClassEntry, RedactionRule, SensitivityOntology, DEFAULT_RULES};
pub use value::{Range, Value};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum UpdlError {
    #[error("unknown ontology class `{0}`")]
    UnknownClass(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("malformed document: {0}")]
    Malformed(String),
    #[error("unsupported schema version {0}")]
    UnsupportedVersion(u64),
    #[error("invalid field path `{0}`")]
    InvalidPath(String),
    #[error("cannot coarsen from granularity {from} down to {to}")]
    Monotonicity { from: u8, to: u8 },
}

/// Dot-separated lowercase segments, e.g. `assets.portfolio`.
pub fn is_valid_path(path: &str) -> bool {
    !path.is_empty()
        && path.split('.').all(|seg| {
            !seg.is_empty()
                && seg
                    .bytes()
                    .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
        })
}

/// Content-derived node identifier: `updl:` followed by 16 hex digits of
/// the SHA-256 of the field path.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct NodeId(String);

const NODE_ID_PREFIX: &str = "updl:";
const NODE_ID_HEX: usize = 16;

impl NodeId {
    pub fn for_path(field_path: &str) -> Self {
        let digest = crate::digest::sha256(field_path.as_bytes());
        let mut id = String::with_capacity(NODE_ID_PREFIX.len() + NODE_ID_HEX);
        id.push_str(NODE_ID_PREFIX);
        id.push_str(&hex::encode(&digest[..NODE_ID_HEX / 2]));
        NodeId(id)
    }

    pub fn parse(s: &str) -> Option<Self> {
        let hex_part = s.strip_prefix(NODE_ID_PREFIX)?;
        let well_formed = hex_part.len() == NODE_ID_HEX
            && hex_part
                .bytes()
                .all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b));
        well_formed.then(|| NodeId(s.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for NodeId {
    type Error = &'static str;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        NodeId::parse(&s).ok_or("malformed node id")
    }
}

impl From<NodeId> for String {
    fn from(id: NodeId) -> String {
        id.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum Granularity {
    #[default]
    Full = 0,
    Bucketed = 1,
    Category = 2,
    Redacted = 3,
}

impl Granularity {
    pub const ALL: [Granularity; 4] = [
        Granularity::Full,
        Granularity::Bucketed,
        Granularity::Category,
        Granularity::Redacted,
    ];

    pub fn from_u8(level: u8) -> Option<Self> {
        Self::ALL.get(level as usize).copied()
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }
}

impl Serialize for Granularity {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(self.as_u8())
    }
}

impl<'de> Deserialize<'de> for Granularity {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let level = u8::deserialize(d)?;
        Granularity::from_u8(level).ok_or_else(|| serde::de::Error::custom("granularity must be 0-3"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProfileNode {
    pub id: NodeId,
    pub field_path: String,
    pub ontology_class: String,
    pub value: Value,
    pub granularity: Granularity,
    pub created_at: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct ProfileEdge {
    pub subject: NodeId,
    pub predicate: String,
    pub object: NodeId,
}

/// Names the ontology a graph was built against.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphContext {
    pub ontology: String,
    pub ontology_version: u32,
}

impl GraphContext {
    pub fn of(ontology: &SensitivityOntology) -> Self {
        Self {
            ontology: ontology.name().to_string(),
            ontology_version: ontology.version(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProfileGraph {
    pub schema_version: u32,
    context: GraphContext,
    nodes: BTreeMap<NodeId, ProfileNode>,
    edges: BTreeSet<ProfileEdge>,
}

impl ProfileGraph {
    pub fn empty(ontology: &SensitivityOntology) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            context: GraphContext::of(ontology),
            nodes: BTreeMap::new(),
            edges: BTreeSet::new(),
        }
    }

    pub fn context(&self) -> &GraphContext {
        &self.context
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = &ProfileNode> {
        self.nodes.values()
    }

    pub fn edges(&self) -> impl Iterator<Item = &ProfileEdge> {
        self.edges.iter()
    }

    pub fn node(&self, id: &NodeId) -> Option<&ProfileNode> {
        self.nodes.get(id)
    }

    pub fn node_by_path(&self, field_path: &str) -> Option<&ProfileNode> {
        self.nodes.get(&NodeId::for_path(field_path))
    }

    /// Objects reachable from `subject` over one `predicate` edge.
    pub fn objects<'a>(&'a self, subject: &'a NodeId, predicate: &'a str) -> impl Iterator<Item = &'a NodeId> + 'a {
        self.edges
            .iter()
            .filter(move |e| &e.subject == subject && e.predicate == predicate)
            .map(|e| &e.object)
    }

    /// Adds a node after checking the per-node invariants.
    pub fn insert_node(&mut self, node: ProfileNode, ontology: &SensitivityOntology) -> Result<(), UpdlError> {
        if !is_valid_path(&node.field_path) {
            return Err(UpdlError::InvalidPath(node.field_path));
        }
        if !ontology.contains(&node.ontology_class) {
            return Err(UpdlError::UnknownClass(node.ontology_class));
        }
        if node.id != NodeId::for_path(&node.field_path) {
            return Err(UpdlError::Integrity(alloc::format!(
                "node id {} does not match field path `{}`",
                node.id,
                node.field_path
            )));
        }
        node.value
            .check()
            .map_err(|e| UpdlError::Integrity(alloc::format!("{}: {e}", node.field_path)))?;
        if self.nodes.contains_key(&node.id) {
            return Err(UpdlError::Integrity(alloc::format!(
                "duplicate field path `{}`",
                node.field_path
            )));
        }
        self.nodes.insert(node.id.clone(), node);
        Ok(())
    }

    pub fn insert_edge(&mut self, edge: ProfileEdge) -> Result<(), UpdlError> {
        for end in [&edge.subject, &edge.object] {
            if !self.nodes.contains_key(end) {
                return Err(UpdlError::Integrity(alloc::format!(
                    "edge endpoint {end} does not resolve"
                )));
            }
        }
        if !is_valid_predicate(&edge.predicate) {
            return Err(UpdlError::Integrity(alloc::format!(
                "invalid predicate `{}`",
                edge.predicate
            )));
        }
        if !self.edges.insert(edge) {
            return Err(UpdlError::Integrity("duplicate edge".into()));
        }
        Ok(())
    }

    /// Overwrites every string held by the graph, then empties it.
    pub(crate) fn wipe(&mut self) {
        use zeroize::Zeroize;
        fn scrub(v: &mut Value) {
            match v {
                Value::Text(s) => s.zeroize(),
                Value::Int(i) => i.zeroize(),
                Value::Num(x) => x.zeroize(),
                Value::Range(r) => {
                    r.lo.zeroize();
                    r.hi.zeroize();
                }
                Value::List(items) => items.iter_mut().for_each(scrub),
                Value::Bool(_) | Value::Ref(_) => {}
            }
        }
        let nodes = core::mem::take(&mut self.nodes);
        for (_, mut node) in nodes {
            scrub(&mut node.value);
            node.field_path.zeroize();
        }
        self.edges.clear();
    }

    /// Checks references held inside node values.
    fn check_references(&self) -> Result<(), UpdlError> {
        for node in self.nodes.values() {
            if let Value::Ref(target) = &node.value {
                if !self.nodes.contains_key(target) {
                    return Err(UpdlError::Integrity(alloc::format!(
                        "`{}` references missing node {target}",
                        node.field_path
                    )));
                }
            }
        }
        Ok(())
    }

    pub(crate) fn from_parts(
        schema_version: u32,
        context: GraphContext,
        nodes: Vec<ProfileNode>,
        edges: Vec<ProfileEdge>,
        ontology: &SensitivityOntology,
    ) -> Result<Self, UpdlError> {
        let mut graph = Self {
            schema_version,
            context,
            nodes: BTreeMap::new(),
            edges: BTreeSet::new(),
        };
        for node in nodes {
            graph.insert_node(node, ontology)?;
        }
        for edge in edges {
            graph.insert_edge(edge)?;
        }
        graph.check_references()?;
        Ok(graph)
    }
}

fn is_valid_predicate(p: &str) -> bool {
    !p.is_empty() && p.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

/// Input row for [`build_profile_graph`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attribute {
    pub field_path: String,
    pub ontology_class: String,
    pub value: Value,
}

impl Attribute {
    pub fn new(field_path: &str, ontology_class: &str, value: Value) -> Self {
        Self {
            field_path: field_path.into(),
            ontology_class: ontology_class.into(),
            value,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub subject_path: String,
    pub predicate: String,
    pub object_path: String,
}

impl Relation {
    pub fn new(subject_path: &str, predicate: &str, object_path: &str) -> Self {
        Self {
            subject_path: subject_path.into(),
            predicate: predicate.into(),
            object_path: object_path.into(),
        }
    }
}

/// Builds a graph whose node ids are derived from field paths.
pub fn build_profile_graph(
    attributes: &[Attribute],
    relations: &[Relation],
    ontology: &SensitivityOntology,
    created_at: u64,
) -> Result<ProfileGraph, UpdlError> {
    let nodes = attributes
        .iter()
        .map(|a| ProfileNode {
            id: NodeId::for_path(&a.field_path),
            field_path: a.field_path.clone(),
            ontology_class: a.ontology_class.clone(),
            value: a.value.clone(),
            granularity: Granularity::Full,
            created_at,
        })
        .collect();
    let mut edges = Vec::with_capacity(relations.len());
    for r in relations {
        for path in [&r.subject_path, &r.object_path] {
            if !attributes.iter().any(|a| &a.field_path == path) {
                return Err(UpdlError::Integrity(alloc::format!(
                    "relation endpoint `{path}` is not an attribute"
                )));
            }
        }
        edges.push(ProfileEdge {
            subject: NodeId::for_path(&r.subject_path),
            predicate: r.predicate.clone(),
            object: NodeId::for_path(&r.object_path),
        });
    }
    ProfileGraph::from_parts(SCHEMA_VERSION, GraphContext::of(ontology), nodes, edges, ontology)
}
