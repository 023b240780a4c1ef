//! Deterministic discrete-event simulation of the three experiments.
//!
//! A run is a pure function of its [`ScenarioConfig`] (seed included), the
//! built-in fixtures and the [`LanguageModel`] it is handed. Time is
//! virtual: operator and waiting durations advance the clock, wall time
//! never enters the trace.

mod adapter;
mod engine;
mod rq1;
mod rq2;
mod rq3;
mod trace;

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand_chacha::ChaCha20Rng;
use rand_core::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::a2a::{run_handshake, Direction, HandshakeReport, ScriptedCounterpart};
use crate::gatekeeper::{
    AuditLog, FieldSource, Gatekeeper, HitlPort, IntentDeclaration, Policy, ProofOfValue, TokenCosts,
};
use crate::pod::{create_pod, LogEntry, PodError, SealedPod};
use crate::updl::{build_profile_graph, Attribute, Relation, SensitivityOntology, Value};

pub use adapter::{render_template, AdapterError, Generation, LanguageModel, ScriptEntry, ScriptedAdapter};
pub use engine::EventQueue;
pub use trace::{DisclosedField, HandshakeSummary, Operator, Trace, TraceError, TraceEvent, TraceRecord};

/// Passphrase of the simulated user's pods.
pub const SIM_PASSPHRASE: &str = "simulated-user";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Rq1,
    Rq2,
    Rq3,
}

impl Experiment {
    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            1 => Some(Experiment::Rq1),
            2 => Some(Experiment::Rq2),
            3 => Some(Experiment::Rq3),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Paradigm {
    Manual,
    GeneralAgent,
    StrongRAG,
    SoDA,
}

impl Paradigm {
    pub const ALL: [Paradigm; 4] = [
        Paradigm::Manual,
        Paradigm::GeneralAgent,
        Paradigm::StrongRAG,
        Paradigm::SoDA,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Paradigm::Manual => "Manual",
            Paradigm::GeneralAgent => "GeneralAgent",
            Paradigm::StrongRAG => "StrongRAG",
            Paradigm::SoDA => "SoDA",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.as_str().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for Paradigm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskId {
    VideoToNote,
    PaperFiltering,
    CodeAudit,
    FinDashboard,
}

impl TaskId {
    pub const ALL: [TaskId; 4] = [
        TaskId::VideoToNote,
        TaskId::PaperFiltering,
        TaskId::CodeAudit,
        TaskId::FinDashboard,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Archetype {
    FinTech,
    DataBroker,
    Academic,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterKind {
    #[default]
    Scripted,
    LiveEndpoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub experiment: Experiment,
    pub strictness_values: Vec<u8>,
    /// Interactions per (agent, strictness) cell.
    pub per_cell: u32,
    pub paradigms: Vec<Paradigm>,
    pub tasks: Vec<TaskId>,
    pub runs_per_task: u32,
    /// Probability that the simulated user approves a malicious escalation.
    pub hitl_error: f64,
    pub adapter: AdapterKind,
    /// Strictness used by the avatar outside the sweep.
    pub default_strictness: u8,
    pub policy: Policy,
    pub costs: TokenCosts,
    pub include_baseline: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            experiment: Experiment::Rq3,
            strictness_values: alloc::vec![0, 5, 10],
            per_cell: 40,
            paradigms: Paradigm::ALL.to_vec(),
            tasks: TaskId::ALL.to_vec(),
            runs_per_task: 4,
            hitl_error: 0.025,
            adapter: AdapterKind::Scripted,
            default_strictness: 5,
            policy: Policy::default(),
            costs: TokenCosts::default(),
            include_baseline: true,
        }
    }
}

impl ScenarioConfig {
    pub fn for_experiment(experiment: Experiment, seed: u64) -> Self {
        Self {
            experiment,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |s: &str| Err(SimError::Config(s.to_string()));
        if self.strictness_values.is_empty() || self.strictness_values.iter().any(|&s| s > 10) {
            return bad("strictness_values must be non-empty and within 0-10");
        }
        if self.per_cell == 0 {
            return bad("per_cell must be positive");
        }
        if !(0.0..=1.0).contains(&self.hitl_error) {
            return bad("hitl_error must be within [0, 1]");
        }
        if self.default_strictness > 10 {
            return bad("default_strictness must be within 0-10");
        }
        if self.paradigms.is_empty() || self.tasks.is_empty() || self.runs_per_task == 0 {
            return bad("paradigms, tasks and runs_per_task must be non-empty");
        }
        if has_duplicates(&self.paradigms) || has_duplicates(&self.tasks) || has_duplicates(&self.strictness_values) {
            return bad("paradigms, tasks and strictness_values must not repeat");
        }
        self.policy.validate().map_err(|e| SimError::Config(e.to_string()))
    }
}

fn has_duplicates<T: Ord + Clone>(items: &[T]) -> bool {
    let mut v = items.to_vec();
    v.sort();
    v.windows(2).any(|w| w[0] == w[1])
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Adapter(#[from] AdapterError),
    #[error(transparent)]
    Pod(#[from] PodError),
    #[error("fixture: {0}")]
    Fixture(String),
}

/// One scripted interaction step of a task template.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Step {
    pub turn: bool,
    pub clicks: u32,
    /// Character count of each free-text input.
    pub inputs: Vec<u32>,
    pub m: u32,
    pub h: u32,
    pub wait_ms: u64,
    /// Script key of the model call made in this step.
    pub llm: Option<String>,
    pub read: u64,
    pub useful: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParadigmScript {
    #[serde(default)]
    pub completions: Option<u32>,
    pub steps: Vec<Step>,
    #[serde(default)]
    pub handshake: Option<IntentDeclaration>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskScript {
    pub id: TaskId,
    /// Friction reference budget of the task.
    pub budget: f64,
    pub paradigms: BTreeMap<Paradigm, ParadigmScript>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rq1Fixture {
    /// Runs the completion counts are expressed against.
    pub runs_per_task: u32,
    pub tasks: Vec<TaskScript>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rq2Fixture {
    pub expected_facts: Vec<String>,
    pub handshake: IntentDeclaration,
    pub paradigms: BTreeMap<Paradigm, ParadigmScript>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogSeed {
    pub text: String,
    pub timestamp: u64,
    pub tags: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileFixture {
    pub attributes: Vec<Attribute>,
    pub relations: Vec<Relation>,
    pub logs: Vec<LogSeed>,
}

impl ProfileFixture {
    /// Builds the graph and seals it under [`SIM_PASSPHRASE`].
    pub fn seal(&self, ontology: &SensitivityOntology, seed: u64) -> Result<SealedPod, SimError> {
        let graph = build_profile_graph(&self.attributes, &self.relations, ontology, 0)
            .map_err(|e| SimError::Fixture(e.to_string()))?;
        let logs: Vec<LogEntry> = self
            .logs
            .iter()
            .map(|l| LogEntry::new(l.text.clone(), l.timestamp, l.tags.clone()))
            .collect();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        Ok(create_pod(&graph, &logs, SIM_PASSPHRASE, &mut rng)?)
    }

    pub fn value(&self, field_path: &str) -> Option<&Value> {
        self.attributes
            .iter()
            .find(|a| a.field_path == field_path)
            .map(|a| &a.value)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profiles {
    pub persona: ProfileFixture,
    pub benchmark: ProfileFixture,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub id: String,
    pub archetype: Archetype,
    pub legitimate: bool,
    pub declared_purpose: String,
    pub requested_fields: Vec<String>,
    pub proof_of_value: Option<ProofOfValue>,
    /// Extra attempts after a blocked handshake.
    pub retries: u32,
    /// Tokens the counterpart spends per message it sends.
    pub message_tokens: u64,
}

impl AgentSpec {
    pub fn declaration(&self) -> IntentDeclaration {
        IntentDeclaration {
            counterpart_id: self.id.clone(),
            declared_purpose: self.declared_purpose.clone(),
            requested_fields: self.requested_fields.clone(),
            proof_of_value: None,
        }
    }
}

/// Built-in fixtures compiled into the crate.
#[derive(Clone, Debug, PartialEq)]
pub struct Fixtures {
    pub rq1: Rq1Fixture,
    pub rq2: Rq2Fixture,
    pub agents: Vec<AgentSpec>,
    pub profiles: Profiles,
    pub script: ScriptedAdapter,
}

fn parse_fixture<T: serde::de::DeserializeOwned>(name: &str, text: &str) -> Result<T, SimError> {
    serde_json::from_str(text).map_err(|e| SimError::Fixture(alloc::format!("{name}: {e}")))
}

impl Fixtures {
    pub fn builtin() -> Result<Self, SimError> {
        Ok(Self {
            rq1: parse_fixture("rq1_tasks", include_str!("../../fixtures/rq1_tasks.json"))?,
            rq2: parse_fixture("rq2_migration", include_str!("../../fixtures/rq2_migration.json"))?,
            agents: parse_fixture("rq3_agents", include_str!("../../fixtures/rq3_agents.json"))?,
            profiles: parse_fixture("profiles", include_str!("../../fixtures/profiles.json"))?,
            script: parse_fixture("adapter_script", include_str!("../../fixtures/adapter_script.json"))?,
        })
    }
}

/// Everything a scenario run produces.
#[derive(Clone, Debug)]
pub struct ScenarioOutput {
    pub trace: Trace,
    pub audit: AuditLog,
}

/// Runs the configured experiment against the built-in fixtures.
pub fn run_scenario(config: &ScenarioConfig, model: &mut dyn LanguageModel) -> Result<ScenarioOutput, SimError> {
    run_scenario_with(config, &Fixtures::builtin()?, model)
}

pub fn run_scenario_with(
    config: &ScenarioConfig,
    fixtures: &Fixtures,
    model: &mut dyn LanguageModel,
) -> Result<ScenarioOutput, SimError> {
    config.validate()?;
    match config.experiment {
        Experiment::Rq1 => rq1::run(config, fixtures, model),
        Experiment::Rq2 => rq2::run(config, fixtures, model),
        Experiment::Rq3 => rq3::run(config, fixtures),
    }
}

/// Microseconds from seconds.
pub(crate) fn secs_to_us(s: f64) -> u64 {
    libm::round(s * 1e6) as u64
}

pub(crate) const KLM_US: [(Operator, u64); 4] = [
    (Operator::M, 1_350_000),
    (Operator::K, 280_000),
    (Operator::P, 1_100_000),
    (Operator::H, 400_000),
];

pub(crate) fn operator_us(op: Operator) -> u64 {
    KLM_US.iter().find(|(o, _)| *o == op).map_or(0, |(_, us)| *us)
}

pub(crate) fn new_gatekeeper(config: &ScenarioConfig, strictness: u8, audit: AuditLog) -> Gatekeeper {
    let mut gk = Gatekeeper::with_defaults(Policy {
        strictness,
        ..config.policy.clone()
    })
    .expect("validated policy");
    gk.costs = config.costs.clone();
    gk.audit = audit;
    gk
}

/// Text form of a value for prompts and fact matching.
pub fn render_value(value: &Value) -> String {
    match value {
        Value::Text(s) => s.clone(),
        Value::List(items) => items.iter().map(render_value).collect::<Vec<_>>().join(", "),
        other => alloc::format!("{other}"),
    }
}

/// Runs one scripted-counterpart handshake and summarizes it.
#[allow(clippy::too_many_arguments)]
pub(crate) fn governed_handshake(
    gk: &mut Gatekeeper,
    source: &dyn FieldSource,
    hitl: &mut dyn HitlPort,
    handshake_id: &str,
    decl: &IntentDeclaration,
    proof: Option<ProofOfValue>,
    now_secs: u64,
    message_tokens: u64,
) -> (HandshakeReport, HandshakeSummary) {
    let mut agent = ScriptedCounterpart::new(handshake_id, decl.clone(), proof);
    let report = run_handshake(&mut agent, gk, source, hitl, now_secs);
    // HITL decisions are recorded inbound but do not come from the counterpart.
    let sent = report
        .transcript
        .messages()
        .filter(|(d, m)| *d == Direction::Inbound && m.message_type() != crate::a2a::MessageType::HitlDecision)
        .count() as u64;
    let summary = HandshakeSummary {
        handshake_id: handshake_id.to_string(),
        counterpart_id: decl.counterpart_id.clone(),
        archetype: None,
        legitimate: None,
        strictness: Some(gk.policy.strictness),
        gatekeeper: true,
        terminal: report.state.phase,
        zone: report.state.decision.as_ref().map(|d| d.zone),
        escalated: report.state.escalated,
        requested_fields: decl.requested_fields.clone(),
        disclosed: report
            .disclosures()
            .into_iter()
            .map(|d| DisclosedField {
                field_path: d.field_path,
                granularity: d.granularity,
            })
            .collect(),
        avatar_tokens: report.avatar_tokens,
        counterpart_tokens: sent * message_tokens,
        transcript: report.transcript.to_text().lines().map(String::from).collect(),
    };
    (report, summary)
}
