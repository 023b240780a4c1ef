use alloc::collections::BTreeMap;
use alloc::string::String;

use super::rq1::{emit_step, pod_handshake};
use super::{
    new_gatekeeper, render_value, Experiment, Fixtures, LanguageModel, Paradigm, ScenarioConfig, ScenarioOutput,
    SimError, Trace, TraceEvent,
};
use crate::gatekeeper::AuditLog;
use crate::updl::SensitivityOntology;

/// Migration to a new platform: the manual user retypes the persona, the
/// avatar injects it from the pod in one step.
pub(super) fn run(
    config: &ScenarioConfig,
    fixtures: &Fixtures,
    model: &mut dyn LanguageModel,
) -> Result<ScenarioOutput, SimError> {
    let fx = &fixtures.rq2;
    let persona = &fixtures.profiles.persona;
    let ontology = SensitivityOntology::default_ontology();
    let pod = persona.seal(&ontology, config.seed)?;
    let mut gk = new_gatekeeper(config, config.default_strictness, AuditLog::default());
    let mut trace = Trace::default();
    let mut clock = 0u64;

    for &paradigm in [Paradigm::Manual, Paradigm::SoDA]
        .iter()
        .filter(|p| config.paradigms.contains(p))
    {
        let Some(script) = fx.paradigms.get(&paradigm) else {
            return Err(SimError::Config(alloc::format!("no migration script for {paradigm}")));
        };
        trace.push(
            clock,
            TraceEvent::EpisodeStart {
                experiment: Experiment::Rq2,
                paradigm,
                task: None,
                run: 0,
                budget: None,
            },
        );
        let mut context: BTreeMap<String, String> = BTreeMap::new();
        if paradigm == Paradigm::SoDA {
            let report = pod_handshake(
                &mut trace,
                clock,
                &pod,
                &mut gk,
                "rq2-migration",
                &fx.handshake,
                |trace, s| {
                    for path in &fx.expected_facts {
                        let found = s.node(path)?.is_some();
                        trace.push(
                            clock,
                            TraceEvent::FactQuery {
                                field_path: path.clone(),
                                found,
                            },
                        );
                    }
                    Ok(())
                },
            )?;
            for d in report.disclosures() {
                context.insert(d.field_path, render_value(&d.value));
            }
        } else {
            // The manual user types what they remember of themselves.
            for a in &persona.attributes {
                context.insert(a.field_path.clone(), render_value(&a.value));
            }
        }
        for step in &script.steps {
            emit_step(&mut trace, &mut clock, step, model, &context)?;
        }
        trace.push(clock, TraceEvent::EpisodeEnd { success: true });
    }
    Ok(ScenarioOutput { trace, audit: gk.audit })
}
