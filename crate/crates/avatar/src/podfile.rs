//! Pod files on disk and the plaintext export bundle.

use std::fs;
use std::path::Path;

use rand_core::OsRng;
use serde::{Deserialize, Serialize};
use soda_core::pod::{create_pod, LogEntry, PodSession, SealedPod};
use soda_core::sim::{Fixtures, ProfileFixture};
use soda_core::updl::{build_profile_graph, parse, serialize, ProfileGraph, SensitivityOntology};

use crate::{Exit, Failure};

pub const PASSPHRASE_ENV: &str = "SODA_PASSPHRASE";
/// Passphrase for the output pod of `migrate` and `import`, if different.
pub const NEW_PASSPHRASE_ENV: &str = "SODA_NEW_PASSPHRASE";

/// Reads the passphrase from the environment, else prompts on the
/// terminal. Never from argv.
pub fn passphrase_from(var: &str, prompt: &str) -> Result<String, Failure> {
    if let Ok(p) = std::env::var(var) {
        if !p.is_empty() {
            return Ok(p);
        }
    }
    rpassword::prompt_password(prompt).map_err(|e| {
        Failure::new(
            Exit::Auth,
            format!("no passphrase: set {var} or run on a terminal ({e})"),
        )
    })
}

pub fn passphrase() -> Result<String, Failure> {
    passphrase_from(PASSPHRASE_ENV, "Pod passphrase: ")
}

/// Output passphrase: the new-passphrase variable if set, else `current`.
pub fn new_passphrase(current: &str) -> String {
    std::env::var(NEW_PASSPHRASE_ENV)
        .ok()
        .filter(|p| !p.is_empty())
        .unwrap_or_else(|| current.to_string())
}

fn io(path: &Path, e: std::io::Error) -> Failure {
    Failure::new(Exit::Format, format!("{}: {e}", path.display()))
}

pub fn read_pod(path: &Path) -> Result<SealedPod, Failure> {
    let bytes = fs::read(path).map_err(|e| io(path, e))?;
    Ok(SealedPod::from_bytes(bytes)?)
}

/// Writes through a sibling temp file so a crash never leaves a torn pod.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io(path, e))
}

pub fn write_pod(path: &Path, pod: &SealedPod) -> Result<(), Failure> {
    write_atomic(path, pod.as_bytes())
}

/// Profile source of `pod create`: a built-in fixture name or a JSON file
/// with `attributes`, `relations` and `logs`.
pub fn load_profile(fixture: Option<&str>, file: Option<&Path>) -> Result<ProfileFixture, Failure> {
    match (fixture, file) {
        (Some(name), None) => {
            let f = Fixtures::builtin()?;
            match name {
                "persona" => Ok(f.profiles.persona),
                "benchmark" => Ok(f.profiles.benchmark),
                other => Err(Failure::new(
                    Exit::Config,
                    format!("unknown fixture `{other}` (persona, benchmark)"),
                )),
            }
        }
        (None, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|e| io(path, e))?;
            serde_json::from_str(&text).map_err(|e| Failure::new(Exit::Format, format!("{}: {e}", path.display())))
        }
        _ => Err(Failure::new(Exit::Config, "give exactly one of --fixture or --from")),
    }
}

pub fn seal_profile(
    profile: &ProfileFixture,
    ontology: &SensitivityOntology,
    passphrase: &str,
    now: u64,
) -> Result<SealedPod, Failure> {
    let graph = build_profile_graph(&profile.attributes, &profile.relations, ontology, now)
        .map_err(|e| Failure::new(Exit::Format, e.to_string()))?;
    let logs: Vec<LogEntry> = profile
        .logs
        .iter()
        .map(|l| LogEntry::new(l.text.clone(), l.timestamp, l.tags.clone()))
        .collect();
    Ok(create_pod(&graph, &logs, passphrase, &mut OsRng)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportedLog {
    pub text: String,
    pub timestamp: u64,
    pub tags: Vec<String>,
}

/// Plaintext, system-neutral form of a pod: the canonical UPDL document
/// plus the raw log lines. Embeddings are recomputed on import.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExportBundle {
    pub v: u32,
    pub profile: serde_json::Value,
    pub logs: Vec<ExportedLog>,
}

pub fn export_bundle(session: &PodSession) -> Result<ExportBundle, Failure> {
    let doc = serialize(session.graph()?);
    let profile = serde_json::from_slice(&doc).map_err(|e| Failure::new(Exit::Format, e.to_string()))?;
    let logs = session
        .logs()?
        .iter()
        .map(|l| ExportedLog {
            text: l.text.clone(),
            timestamp: l.timestamp,
            tags: l.tags.clone(),
        })
        .collect();
    Ok(ExportBundle { v: 1, profile, logs })
}

pub fn import_bundle(
    bundle: &ExportBundle,
    ontology: &SensitivityOntology,
) -> Result<(ProfileGraph, Vec<LogEntry>), Failure> {
    if bundle.v != 1 {
        return Err(Failure::new(
            Exit::Format,
            format!("unsupported bundle version {}", bundle.v),
        ));
    }
    let doc = serde_json::to_vec(&bundle.profile).map_err(|e| Failure::new(Exit::Format, e.to_string()))?;
    let graph = parse(&doc, ontology).map_err(|e| Failure::new(Exit::Format, e.to_string()))?;
    let logs = bundle
        .logs
        .iter()
        .map(|l| LogEntry::new(l.text.clone(), l.timestamp, l.tags.clone()))
        .collect();
    Ok((graph, logs))
}

/// Re-seals a mounted pod after a full UPDL serialize/parse cycle, with a
/// fresh salt and nonce.
pub fn migrate(session: &PodSession, ontology: &SensitivityOntology, passphrase: &str) -> Result<SealedPod, Failure> {
    let (graph, logs) = import_bundle(&export_bundle(session)?, ontology)?;
    Ok(create_pod(&graph, &logs, passphrase, &mut OsRng)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct PodCounts {
    pub nodes: usize,
    pub edges: usize,
    pub logs: usize,
}

pub fn counts(session: &PodSession) -> Result<PodCounts, Failure> {
    let g = session.graph()?;
    Ok(PodCounts {
        nodes: g.node_count(),
        edges: g.edge_count(),
        logs: session.logs()?.len(),
    })
}
