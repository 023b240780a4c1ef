use soda_core::metrics::{minimization_violations, Rq2Report, Rq3Report};
use soda_core::sim::{
    run_scenario, run_scenario_with, Archetype, Experiment, Fixtures, Paradigm, ScenarioConfig, ScriptedAdapter,
    SimError, TraceEvent,
};
use soda_core::updl::Granularity;

fn run(config: &ScenarioConfig) -> soda_core::sim::ScenarioOutput {
    let f = Fixtures::builtin().unwrap();
    let mut model = f.script.clone();
    run_scenario_with(config, &f, &mut model).unwrap()
}

#[test]
fn rq3_defaults_produce_360_governed_handshakes() {
    let out = run(&ScenarioConfig::for_experiment(Experiment::Rq3, 42));
    let governed: Vec<_> = out.trace.handshakes().filter(|h| h.gatekeeper).collect();
    assert_eq!(governed.len(), 3 * 3 * 40);
    assert_eq!(out.audit.len(), governed.len());
    assert!(minimization_violations(out.trace.handshakes()).is_empty());
    // Ungoverned brokers receive the identity record in full.
    for h in out
        .trace
        .handshakes()
        .filter(|h| !h.gatekeeper && h.archetype == Some(Archetype::DataBroker))
    {
        assert!(h.disclosed.iter().all(|d| d.granularity == Granularity::Full));
        assert!(!h.disclosed.is_empty());
    }
}

#[test]
fn seeds_change_the_sample_not_the_totals() {
    for seed in [1, 7, 1234] {
        let out = run(&ScenarioConfig::for_experiment(Experiment::Rq3, seed));
        let r = Rq3Report::evaluate(&out.trace).unwrap();
        for s in [0, 5] {
            let p = r.row(Some(s)).unwrap().p_safe;
            assert!((p - 97.5).abs() <= 2.5, "seed {seed} S={s}: {p}");
        }
        assert_eq!(r.row(Some(10)).unwrap().u_service, 50.0);
    }
}

#[test]
fn hitl_error_knob_scales_exposure() {
    let config = ScenarioConfig {
        hitl_error: 0.0,
        include_baseline: false,
        ..ScenarioConfig::for_experiment(Experiment::Rq3, 42)
    };
    let r = Rq3Report::evaluate(&run(&config).trace).unwrap();
    assert!(r.rows.iter().all(|x| x.p_safe == 100.0));
    assert!(r.row(None).is_none());
}

#[test]
fn migration_soda_is_one_click() {
    let f = Fixtures::builtin().unwrap();
    let out = run(&ScenarioConfig::for_experiment(Experiment::Rq2, 42));
    let r = Rq2Report::evaluate(&out.trace, &Rq2Report::expectation(&f)).unwrap();
    let s = r.row(Paradigm::SoDA).unwrap();
    assert_eq!((s.turns, s.chars), (1, 0));
    let queries = out
        .trace
        .events()
        .filter(|e| matches!(e, TraceEvent::FactQuery { found: true, .. }))
        .count();
    assert_eq!(queries, 5);
}

#[test]
fn pods_are_unmounted_after_use() {
    for e in [Experiment::Rq1, Experiment::Rq2, Experiment::Rq3] {
        let out = run(&ScenarioConfig::for_experiment(e, 42));
        let mounts = out
            .trace
            .events()
            .filter(|e| matches!(e, TraceEvent::PodMount { .. }))
            .count();
        let unmounts = out
            .trace
            .events()
            .filter(|e| matches!(e, TraceEvent::PodUnmount { .. }))
            .count();
        assert!(mounts > 0);
        assert_eq!(mounts, unmounts, "{e:?}");
    }
}

#[test]
fn config_errors_surface() {
    let mut empty = ScriptedAdapter::default();
    let bad = ScenarioConfig {
        runs_per_task: 5,
        ..ScenarioConfig::for_experiment(Experiment::Rq1, 42)
    };
    assert!(matches!(run_scenario(&bad, &mut empty), Err(SimError::Config(_))));
    let ok = ScenarioConfig::for_experiment(Experiment::Rq1, 42);
    assert!(matches!(run_scenario(&ok, &mut empty), Err(SimError::Adapter(_))));
}
