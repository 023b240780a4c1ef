use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;

use rand::seq::index::sample;
use rand_chacha::ChaCha20Rng;
use rand_core::SeedableRng;

use super::{
    governed_handshake, new_gatekeeper, operator_us, Experiment, Fixtures, LanguageModel, Operator, Paradigm,
    ScenarioConfig, ScenarioOutput, SimError, Step, Trace, TraceEvent, SIM_PASSPHRASE,
};
use crate::gatekeeper::{AuditLog, Gatekeeper, HitlRequest, HitlVerdict};
use crate::pod::SealedPod;
use crate::updl::SensitivityOntology;

/// Emits one scripted step and advances the virtual clock past it.
pub(super) fn emit_step(
    trace: &mut Trace,
    clock: &mut u64,
    step: &Step,
    model: &mut dyn LanguageModel,
    context: &BTreeMap<String, String>,
) -> Result<(), SimError> {
    if step.turn {
        trace.push(*clock, TraceEvent::Turn);
    }
    let op = |trace: &mut Trace, clock: &mut u64, op: Operator, count: u32| {
        if count > 0 {
            trace.push(*clock, TraceEvent::Operator { op, count });
            *clock += operator_us(op) * u64::from(count);
        }
    };
    op(trace, clock, Operator::M, step.m);
    if step.clicks > 0 {
        trace.push(*clock, TraceEvent::Click { count: step.clicks });
        op(trace, clock, Operator::P, step.clicks);
    }
    for &chars in &step.inputs {
        trace.push(*clock, TraceEvent::TextInput { chars });
        op(trace, clock, Operator::K, chars);
    }
    op(trace, clock, Operator::H, step.h);
    match &step.llm {
        Some(key) => {
            let g = model.generate(key, context)?;
            let exposed = g.tokens_out + step.read;
            trace.push(
                *clock,
                TraceEvent::Tokens {
                    key: key.clone(),
                    tokens_in: g.tokens_in,
                    tokens_out: g.tokens_out,
                    read: step.read,
                    useful: step.useful.min(exposed),
                },
            );
            trace.push(*clock, TraceEvent::Output { text: g.text });
        }
        None if step.read > 0 => trace.push(
            *clock,
            TraceEvent::Tokens {
                key: String::from("read"),
                tokens_in: 0,
                tokens_out: 0,
                read: step.read,
                useful: step.useful.min(step.read),
            },
        ),
        None => {}
    }
    if step.wait_ms > 0 {
        trace.push(*clock, TraceEvent::Wait { ms: step.wait_ms });
        *clock += step.wait_ms * 1000;
    }
    Ok(())
}

/// Mounts the pod, runs one handshake, and unmounts, tracing all three.
pub(super) fn pod_handshake(
    trace: &mut Trace,
    clock: u64,
    pod: &SealedPod,
    gk: &mut Gatekeeper,
    handshake_id: &str,
    decl: &crate::gatekeeper::IntentDeclaration,
    mut before_unmount: impl FnMut(&mut Trace, &crate::pod::PodSession) -> Result<(), SimError>,
) -> Result<crate::a2a::HandshakeReport, SimError> {
    let ontology = SensitivityOntology::default_ontology();
    let now = clock / 1_000_000;
    let mut session = pod.mount(SIM_PASSPHRASE, &ontology, now)?;
    trace.push(
        clock,
        TraceEvent::PodMount {
            session_id: session.session_id().into(),
        },
    );
    before_unmount(trace, &session)?;
    trace.push(
        clock,
        TraceEvent::HandshakeStart {
            handshake_id: handshake_id.into(),
            counterpart_id: decl.counterpart_id.clone(),
        },
    );
    // Legitimate task counterparts: the simulated user approves.
    let mut approve = |_: &HitlRequest| HitlVerdict::Approve;
    let (report, summary) = governed_handshake(
        gk,
        &session,
        &mut approve,
        handshake_id,
        decl,
        decl.proof_of_value.clone(),
        now,
        0,
    );
    trace.push(clock, TraceEvent::Handshake(summary));
    let receipt = session.unmount(now)?;
    trace.push(
        clock,
        TraceEvent::PodUnmount {
            cleared_buffers: receipt.cleared_buffers,
            cleared_entries: receipt.cleared_entries,
        },
    );
    Ok(report)
}

pub(super) fn run(
    config: &ScenarioConfig,
    fixtures: &Fixtures,
    model: &mut dyn LanguageModel,
) -> Result<ScenarioOutput, SimError> {
    let runs = config.runs_per_task;
    if runs != fixtures.rq1.runs_per_task {
        return Err(SimError::Config(format!(
            "task completions are scripted for {} runs per task",
            fixtures.rq1.runs_per_task
        )));
    }
    let ontology = SensitivityOntology::default_ontology();
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let pod = fixtures.profiles.benchmark.seal(&ontology, config.seed)?;
    let mut gk = new_gatekeeper(config, config.default_strictness, AuditLog::default());
    let mut trace = Trace::default();
    let mut clock = 0u64;
    let no_context = BTreeMap::new();

    for &paradigm in &config.paradigms {
        for &task in &config.tasks {
            let script = fixtures
                .rq1
                .tasks
                .iter()
                .find(|t| t.id == task)
                .and_then(|t| t.paradigms.get(&paradigm).map(|p| (t.budget, p)));
            let Some((budget, script)) = script else {
                return Err(SimError::Config(format!("no {paradigm} template for {task:?}")));
            };
            let completions = script.completions.unwrap_or(runs);
            if completions > runs {
                return Err(SimError::Fixture(format!(
                    "{paradigm}/{task:?}: more completions than runs"
                )));
            }
            let failures: BTreeSet<usize> = sample(&mut rng, runs as usize, (runs - completions) as usize)
                .into_iter()
                .collect();
            for run in 0..runs {
                trace.push(
                    clock,
                    TraceEvent::EpisodeStart {
                        experiment: Experiment::Rq1,
                        paradigm,
                        task: Some(task),
                        run,
                        budget: Some(budget),
                    },
                );
                if let (Paradigm::SoDA, Some(decl)) = (paradigm, &script.handshake) {
                    let id = format!("rq1-{task:?}-{run}");
                    pod_handshake(&mut trace, clock, &pod, &mut gk, &id, decl, |_, _| Ok(()))?;
                }
                for step in &script.steps {
                    emit_step(&mut trace, &mut clock, step, model, &no_context)?;
                }
                trace.push(
                    clock,
                    TraceEvent::EpisodeEnd {
                        success: !failures.contains(&(run as usize)),
                    },
                );
            }
        }
    }
    Ok(ScenarioOutput { trace, audit: gk.audit })
}
