use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_core::SeedableRng;

use super::{
    governed_handshake, new_gatekeeper, secs_to_us, AgentSpec, Archetype, DisclosedField, EventQueue, Experiment,
    Fixtures, HandshakeSummary, Paradigm, ScenarioConfig, ScenarioOutput, SimError, Trace, TraceEvent, SIM_PASSPHRASE,
};
use crate::a2a::Phase;
use crate::gatekeeper::{release, AuditLog, Gatekeeper, HitlRequest, HitlVerdict};
use crate::pod::PodSession;
use crate::updl::{Granularity, SensitivityOntology};

const CELL_SPAN_US: u64 = 1_000_000_000;
const FRAME_US: u64 = 40_000;
const HITL_US: u64 = 3_000_000;

/// A sweep cell: `None` is the ungoverned baseline.
type Cell = Option<u8>;

struct Arrival {
    agent: usize,
    index: u32,
}

/// Exact-quota sample of DataBroker interactions the simulated user
/// wrongly approves.
fn hitl_errors(rng: &mut ChaCha20Rng, per_cell: u32, epsilon: f64) -> BTreeSet<u32> {
    let k = (libm::round(epsilon * f64::from(per_cell)) as usize).min(per_cell as usize);
    sample(rng, per_cell as usize, k)
        .into_iter()
        .map(|i| i as u32)
        .collect()
}

fn baseline_handshake(
    session: &PodSession,
    ontology: &SensitivityOntology,
    id: &str,
    agent: &AgentSpec,
) -> Result<HandshakeSummary, SimError> {
    let disclosed = release(session, &agent.requested_fields, Granularity::Full, ontology)
        .map_err(|e| SimError::Fixture(e.to_string()))?
        .into_iter()
        .map(|d| DisclosedField {
            field_path: d.field_path,
            granularity: d.granularity,
        })
        .collect();
    Ok(HandshakeSummary {
        handshake_id: id.into(),
        counterpart_id: agent.id.clone(),
        archetype: Some(agent.archetype),
        legitimate: Some(agent.legitimate),
        strictness: None,
        gatekeeper: false,
        terminal: Phase::Granted,
        zone: None,
        escalated: false,
        requested_fields: agent.requested_fields.clone(),
        disclosed,
        avatar_tokens: 0,
        counterpart_tokens: 0,
        transcript: Vec::new(),
    })
}

fn cell_label(cell: Cell) -> String {
    match cell {
        None => String::from("base"),
        Some(s) => format!("s{s}"),
    }
}

fn archetype_slug(a: Archetype) -> &'static str {
    match a {
        Archetype::FinTech => "fintech",
        Archetype::DataBroker => "databroker",
        Archetype::Academic => "academic",
    }
}

/// Stress test: every agent hits the avatar `per_cell` times at each
/// strictness level, arrivals interleaved in virtual time.
pub(super) fn run(config: &ScenarioConfig, fixtures: &Fixtures) -> Result<ScenarioOutput, SimError> {
    let agents = &fixtures.agents;
    if agents.is_empty() {
        return Err(SimError::Fixture("no agents".into()));
    }
    let ontology = SensitivityOntology::default_ontology();
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let pod = fixtures.profiles.benchmark.seal(&ontology, config.seed)?;
    let mut gk: Gatekeeper = new_gatekeeper(config, config.default_strictness, AuditLog::default());
    let mut trace = Trace::default();

    let mut cells: Vec<Cell> = Vec::new();
    if config.include_baseline {
        cells.push(None);
    }
    cells.extend(config.strictness_values.iter().map(|&s| Some(s)));

    let mut session = pod.mount(SIM_PASSPHRASE, &ontology, 0)?;
    trace.push(
        0,
        TraceEvent::PodMount {
            session_id: session.session_id().into(),
        },
    );

    let mut clock = 0u64;
    for (ci, &cell) in cells.iter().enumerate() {
        let cell_start = (ci as u64 * CELL_SPAN_US).max(clock);
        let errors = hitl_errors(&mut rng, config.per_cell, config.hitl_error);
        let mut queue = EventQueue::new();
        for (agent, _) in agents.iter().enumerate() {
            let mut at = cell_start;
            for index in 0..config.per_cell {
                at += secs_to_us(rng.gen_range(0.5..3.5));
                queue.schedule(at, Arrival { agent, index });
            }
        }
        trace.push(
            cell_start,
            TraceEvent::EpisodeStart {
                experiment: Experiment::Rq3,
                paradigm: Paradigm::SoDA,
                task: None,
                run: ci as u32,
                budget: None,
            },
        );
        // The gatekeeper serves one handshake at a time.
        let mut busy_until = cell_start;
        while let Some((at, Arrival { agent, index })) = queue.pop() {
            let spec = &agents[agent];
            let base_id = format!("rq3-{}-{}-{index:02}", cell_label(cell), archetype_slug(spec.archetype));
            for attempt in 0..=spec.retries {
                let id = if attempt == 0 {
                    base_id.clone()
                } else {
                    format!("{base_id}-r{attempt}")
                };
                let start = at.max(busy_until);
                trace.push(
                    start,
                    TraceEvent::HandshakeStart {
                        handshake_id: id.clone(),
                        counterpart_id: spec.id.clone(),
                    },
                );
                let summary = match cell {
                    None => baseline_handshake(&session, &ontology, &id, spec)?,
                    Some(s) => {
                        gk.policy.strictness = s;
                        let fooled = spec.archetype == Archetype::DataBroker && errors.contains(&index);
                        let legitimate = spec.legitimate;
                        let mut user = |_: &HitlRequest| {
                            if legitimate || fooled {
                                HitlVerdict::Approve
                            } else {
                                HitlVerdict::Deny
                            }
                        };
                        let decl = spec.declaration();
                        let (_, mut summary) = governed_handshake(
                            &mut gk,
                            &session,
                            &mut user,
                            &id,
                            &decl,
                            spec.proof_of_value.clone(),
                            start / 1_000_000,
                            spec.message_tokens,
                        );
                        summary.archetype = Some(spec.archetype);
                        summary.legitimate = Some(spec.legitimate);
                        summary
                    }
                };
                let frames = summary.transcript.len().max(2) as u64;
                let end = start + frames * FRAME_US + if summary.escalated { HITL_US } else { 0 };
                busy_until = end;
                let blocked = summary.terminal == Phase::Blocked;
                trace.push(end, TraceEvent::Handshake(summary));
                if !blocked {
                    break;
                }
            }
        }
        clock = busy_until;
        trace.push(clock, TraceEvent::EpisodeEnd { success: true });
    }

    let receipt = session.unmount(clock / 1_000_000)?;
    trace.push(
        clock,
        TraceEvent::PodUnmount {
            cleared_buffers: receipt.cleared_buffers,
            cleared_entries: receipt.cleared_entries,
        },
    );
    gk.policy.strictness = config.default_strictness;
    Ok(ScenarioOutput { trace, audit: gk.audit })
}
