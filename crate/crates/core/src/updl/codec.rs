use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde_json::{Map, Value as Json};

use super::{
    Granularity, GraphContext, NodeId, ProfileEdge, ProfileGraph, ProfileNode, SensitivityOntology, UpdlError, Value,
    SCHEMA_VERSION,
};

const VOCAB: &str = "urn:updl:vocab#";

const NODE_KEYS: [&str; 6] = ["@id", "class", "created_at", "field_path", "granularity", "value"];
const EDGE_KEYS: [&str; 3] = ["object", "predicate", "subject"];
const CONTEXT_KEYS: [&str; 3] = ["@vocab", "ontology", "ontology_version"];
const TOP_KEYS: [&str; 4] = ["@context", "edges", "nodes", "schema_version"];

/// Canonical document bytes. `serde_json::Map` is ordered by key, and
/// nodes and edges are already kept sorted by the graph, so the output
/// does not depend on insertion order.
pub fn serialize(graph: &ProfileGraph) -> Vec<u8> {
    let mut context = Map::new();
    context.insert("@vocab".into(), Json::String(VOCAB.into()));
    context.insert("ontology".into(), Json::String(graph.context.ontology.clone()));
    context.insert("ontology_version".into(), Json::from(graph.context.ontology_version));

    let nodes = graph
        .nodes()
        .map(|n| {
            let mut m = Map::new();
            m.insert("@id".into(), Json::String(n.id.as_str().into()));
            m.insert("class".into(), Json::String(n.ontology_class.clone()));
            m.insert("created_at".into(), Json::from(n.created_at));
            m.insert("field_path".into(), Json::String(n.field_path.clone()));
            m.insert("granularity".into(), Json::from(n.granularity.as_u8()));
            m.insert("value".into(), n.value.to_json());
            Json::Object(m)
        })
        .collect();

    let edges = graph
        .edges()
        .map(|e| {
            let mut m = Map::new();
            m.insert("object".into(), Json::String(e.object.as_str().into()));
            m.insert("predicate".into(), Json::String(e.predicate.clone()));
            m.insert("subject".into(), Json::String(e.subject.as_str().into()));
            Json::Object(m)
        })
        .collect();

    let mut doc = Map::new();
    doc.insert("@context".into(), Json::Object(context));
    doc.insert("edges".into(), Json::Array(edges));
    doc.insert("nodes".into(), Json::Array(nodes));
    doc.insert("schema_version".into(), Json::from(graph.schema_version));
    serde_json::to_vec(&Json::Object(doc)).expect("in-memory JSON serialization cannot fail")
}

/// Parses an untrusted document against `ontology`.
pub fn parse(bytes: &[u8], ontology: &SensitivityOntology) -> Result<ProfileGraph, UpdlError> {
    let doc: Json = serde_json::from_slice(bytes).map_err(|e| UpdlError::Malformed(e.to_string()))?;
    let doc = as_object(&doc, "document")?;
    exact_keys(doc, &TOP_KEYS, "document")?;

    let version = doc["schema_version"]
        .as_u64()
        .ok_or_else(|| malformed("schema_version must be an unsigned integer"))?;
    if version != u64::from(SCHEMA_VERSION) {
        return Err(UpdlError::UnsupportedVersion(version));
    }

    let context = as_object(&doc["@context"], "@context")?;
    exact_keys(context, &CONTEXT_KEYS, "@context")?;
    if context["@vocab"].as_str() != Some(VOCAB) {
        return Err(malformed("unexpected @vocab"));
    }
    let context = GraphContext {
        ontology: string_field(context, "ontology")?,
        ontology_version: context["ontology_version"]
            .as_u64()
            .and_then(|v| u32::try_from(v).ok())
            .ok_or_else(|| malformed("ontology_version must be a u32"))?,
    };
    if context.ontology != ontology.name() || context.ontology_version != ontology.version() {
        return Err(UpdlError::Schema(alloc::format!(
            "document uses ontology {}@{}, expected {}@{}",
            context.ontology,
            context.ontology_version,
            ontology.name(),
            ontology.version()
        )));
    }

    let nodes = doc["nodes"]
        .as_array()
        .ok_or_else(|| malformed("nodes must be an array"))?
        .iter()
        .map(parse_node)
        .collect::<Result<Vec<_>, _>>()?;
    let edges = doc["edges"]
        .as_array()
        .ok_or_else(|| malformed("edges must be an array"))?
        .iter()
        .map(parse_edge)
        .collect::<Result<Vec<_>, _>>()?;

    ProfileGraph::from_parts(version as u32, context, nodes, edges, ontology)
}

fn parse_node(json: &Json) -> Result<ProfileNode, UpdlError> {
    let m = as_object(json, "node")?;
    exact_keys(m, &NODE_KEYS, "node")?;
    let granularity = m["granularity"]
        .as_u64()
        .and_then(|g| u8::try_from(g).ok())
        .and_then(Granularity::from_u8)
        .ok_or_else(|| malformed("granularity must be 0-3"))?;
    Ok(ProfileNode {
        id: node_id(&m["@id"])?,
        field_path: string_field(m, "field_path")?,
        ontology_class: string_field(m, "class")?,
        value: Value::from_json(&m["value"]).map_err(UpdlError::Malformed)?,
        granularity,
        created_at: m["created_at"]
            .as_u64()
            .ok_or_else(|| malformed("created_at must be an unsigned integer"))?,
    })
}

fn parse_edge(json: &Json) -> Result<ProfileEdge, UpdlError> {
    let m = as_object(json, "edge")?;
    exact_keys(m, &EDGE_KEYS, "edge")?;
    Ok(ProfileEdge {
        subject: node_id(&m["subject"])?,
        predicate: string_field(m, "predicate")?,
        object: node_id(&m["object"])?,
    })
}

fn node_id(json: &Json) -> Result<NodeId, UpdlError> {
    json.as_str()
        .and_then(NodeId::parse)
        .ok_or_else(|| malformed("malformed node id"))
}

fn as_object<'a>(json: &'a Json, what: &str) -> Result<&'a Map<String, Json>, UpdlError> {
    json.as_object()
        .ok_or_else(|| UpdlError::Malformed(alloc::format!("{what} must be an object")))
}

fn exact_keys(m: &Map<String, Json>, keys: &[&str], what: &str) -> Result<(), UpdlError> {
    if m.len() != keys.len() || !keys.iter().all(|k| m.contains_key(*k)) {
        return Err(UpdlError::Malformed(alloc::format!(
            "{what} must have exactly the keys {keys:?}"
        )));
    }
    Ok(())
}

fn string_field(m: &Map<String, Json>, key: &str) -> Result<String, UpdlError> {
    m[key]
        .as_str()
        .map(ToString::to_string)
        .ok_or_else(|| UpdlError::Malformed(alloc::format!("{key} must be a string")))
}

fn malformed(msg: &str) -> UpdlError {
    UpdlError::Malformed(msg.to_string())
}
