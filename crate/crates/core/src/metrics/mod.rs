//! Interaction and governance metrics computed from simulation traces.
//!
//! Every function here is a pure fold over trace events, so metrics over a
//! concatenation equal the combination of metrics over the parts.

mod report;

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::sim::{
    render_value, Archetype, Experiment, HandshakeSummary, Operator, Paradigm, TaskId, TraceEvent, TraceRecord,
};
use crate::updl::{Granularity, Value};

pub use report::{
    emit_report, parse_structured, MetricsReport, ReductionRow, ReportFormat, Rq1Report, Rq1Row, Rq2Report, Rq2Row,
    Rq3Report, Rq3Row, REPORT_VERSION,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("config: {0}")]
    Config(String),
    #[error("undefined metric: {0}")]
    Undefined(&'static str),
    #[error("trace: {0}")]
    Trace(String),
    #[error("unknown report format `{0}`")]
    UnknownFormat(String),
    #[error("structured report: {0}")]
    Parse(String),
}

/// Keystroke-level operator times in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KlmConstants {
    pub t_m: f64,
    pub t_k: f64,
    pub t_p: f64,
    pub t_h: f64,
}

impl Default for KlmConstants {
    fn default() -> Self {
        Self {
            t_m: 1.35,
            t_k: 0.28,
            t_p: 1.10,
            t_h: 0.40,
        }
    }
}

impl KlmConstants {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if [self.t_m, self.t_k, self.t_p, self.t_h]
            .iter()
            .all(|t| *t > 0.0 && t.is_finite())
        {
            Ok(())
        } else {
            Err(MetricsError::Config("operator times must be positive".into()))
        }
    }

    fn time(&self, op: Operator) -> f64 {
        match op {
            Operator::M => self.t_m,
            Operator::K => self.t_k,
            Operator::P => self.t_p,
            Operator::H => self.t_h,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrictionWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for FrictionWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.2,
            gamma: 0.5,
        }
    }
}

/// Cognitive load in seconds: operator counts times unit cost, plus waits.
/// Waits are unsigned milliseconds, so a negative wait cannot be expressed.
pub fn cognitive_load<'a>(events: impl IntoIterator<Item = &'a TraceEvent>, k: &KlmConstants) -> f64 {
    events.into_iter().fold(0.0, |acc, e| match e {
        TraceEvent::Operator { op, count } => acc + k.time(*op) * f64::from(*count),
        TraceEvent::Wait { ms } => acc + *ms as f64 / 1000.0,
        _ => acc,
    })
}

/// Raw turn, click and input counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionCounts {
    pub turns: u64,
    pub clicks: u64,
    pub inputs: u64,
    pub chars: u64,
}

pub fn interaction_counts<'a>(events: impl IntoIterator<Item = &'a TraceEvent>) -> InteractionCounts {
    let mut c = InteractionCounts::default();
    for e in events {
        match e {
            TraceEvent::Turn => c.turns += 1,
            TraceEvent::Click { count } => c.clicks += u64::from(*count),
            TraceEvent::TextInput { chars } => {
                c.inputs += 1;
                c.chars += u64::from(*chars);
            }
            _ => {}
        }
    }
    c
}

/// Friction coefficient of an interaction count, normalized by the task's
/// reference budget and clamped to [0, 1].
pub fn friction_of(c: &InteractionCounts, w: &FrictionWeights, budget: Option<f64>) -> Result<f64, MetricsError> {
    let b = budget.ok_or_else(|| MetricsError::Config("friction needs a reference budget".into()))?;
    if !(b > 0.0 && b.is_finite()) || [w.alpha, w.beta, w.gamma].iter().any(|x| x.is_nan() || *x < 0.0) {
        return Err(MetricsError::Config("weights must be >= 0 and budget > 0".into()));
    }
    let raw = w.alpha * c.turns as f64 + w.beta * c.clicks as f64 + w.gamma * c.inputs as f64;
    Ok((raw / b).clamp(0.0, 1.0))
}

pub fn friction<'a>(
    events: impl IntoIterator<Item = &'a TraceEvent>,
    w: &FrictionWeights,
    budget: Option<f64>,
) -> Result<f64, MetricsError> {
    friction_of(&interaction_counts(events), w, budget)
}

/// Useful and exposed token totals.
pub fn token_exposure<'a>(events: impl IntoIterator<Item = &'a TraceEvent>) -> (u64, u64) {
    events.into_iter().fold((0, 0), |(u, x), e| match e {
        TraceEvent::Tokens { useful, .. } => (u + useful, x + e.tokens_exposed()),
        _ => (u, x),
    })
}

/// Share of exposed tokens that serve the user's intent.
pub fn snr<'a>(events: impl IntoIterator<Item = &'a TraceEvent>) -> Result<f64, MetricsError> {
    match token_exposure(events) {
        (_, 0) => Err(MetricsError::Undefined("no tokens were exposed")),
        (u, x) => Ok((u as f64 / x as f64).min(1.0)),
    }
}

/// Model tokens consumed (prompt plus completion). `None` when the
/// events contain no model call at all.
pub fn model_tokens<'a>(events: impl IntoIterator<Item = &'a TraceEvent>) -> Option<u64> {
    events
        .into_iter()
        .filter_map(|e| match e {
            TraceEvent::Tokens {
                tokens_in, tokens_out, ..
            } if tokens_in + tokens_out > 0 => Some(tokens_in + tokens_out),
            _ => None,
        })
        .reduce(|a, b| a + b)
}

/// Total waiting time in seconds.
pub fn wait_secs<'a>(events: impl IntoIterator<Item = &'a TraceEvent>) -> f64 {
    events.into_iter().fold(0.0, |acc, e| match e {
        TraceEvent::Wait { ms } => acc + *ms as f64 / 1000.0,
        _ => acc,
    })
}

/// One fact the output must state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpectedFact {
    pub field_path: String,
    pub value: Value,
}

fn fact_present(output: &str, value: &Value) -> bool {
    match value {
        Value::List(items) if !items.is_empty() => items.iter().all(|v| fact_present(output, v)),
        other => output.contains(render_value(other).as_str()),
    }
}

/// Fraction of expected facts missing from `output`. A list fact counts as
/// present only if every element appears.
pub fn result_deviation(output: &str, expected: &[ExpectedFact]) -> Result<f64, MetricsError> {
    if expected.is_empty() {
        return Err(MetricsError::Config("expectation lists no facts".into()));
    }
    let hit = expected.iter().filter(|f| fact_present(output, &f.value)).count();
    Ok(1.0 - hit as f64 / expected.len() as f64)
}

/// Governance outcome of a set of handshakes, rates in percent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GovernanceRates {
    pub p_safe: f64,
    pub u_service: f64,
    pub mean_tokens: f64,
    pub interactions: u64,
}

/// A data-broker interaction counts as exposed when any field left the
/// avatar above redaction.
pub fn is_exposed(h: &HandshakeSummary) -> bool {
    h.disclosed.iter().any(|d| d.granularity < Granularity::Redacted)
}

pub fn governance_rates<'a>(
    handshakes: impl IntoIterator<Item = &'a HandshakeSummary>,
) -> Result<GovernanceRates, MetricsError> {
    let (mut brokers, mut safe, mut legit, mut served, mut n, mut tokens) = (0u64, 0u64, 0u64, 0u64, 0u64, 0u64);
    for h in handshakes {
        let (Some(archetype), Some(legitimate)) = (h.archetype, h.legitimate) else {
            return Err(MetricsError::Trace(alloc::format!(
                "handshake {} is untagged",
                h.handshake_id
            )));
        };
        n += 1;
        tokens += h.avatar_tokens;
        if archetype == Archetype::DataBroker {
            brokers += 1;
            safe += u64::from(!is_exposed(h));
        }
        if legitimate {
            legit += 1;
            served += u64::from(h.terminal == crate::a2a::Phase::Granted);
        }
    }
    let pct = |a: u64, b: u64| if b == 0 { 0.0 } else { 100.0 * a as f64 / b as f64 };
    Ok(GovernanceRates {
        p_safe: pct(safe, brokers),
        u_service: pct(served, legit),
        mean_tokens: if n == 0 { 0.0 } else { tokens as f64 / n as f64 },
        interactions: n,
    })
}

/// Handshakes that released a field nobody asked for.
pub fn minimization_violations<'a>(
    handshakes: impl IntoIterator<Item = &'a HandshakeSummary>,
) -> Vec<&'a HandshakeSummary> {
    handshakes
        .into_iter()
        .filter(|h| h.disclosed.iter().any(|d| !h.requested_fields.contains(&d.field_path)))
        .collect()
}

/// An episode slice of a trace.
#[derive(Clone, Debug)]
pub struct Episode<'a> {
    pub experiment: Experiment,
    pub paradigm: Paradigm,
    pub task: Option<TaskId>,
    pub run: u32,
    pub budget: Option<f64>,
    pub success: bool,
    pub records: &'a [TraceRecord],
}

impl<'a> Episode<'a> {
    pub fn events(&self) -> impl Iterator<Item = &'a TraceEvent> + Clone {
        self.records.iter().map(|r| &r.event)
    }

    pub fn handshakes(&self) -> impl Iterator<Item = &'a HandshakeSummary> {
        self.events().filter_map(|e| match e {
            TraceEvent::Handshake(h) => Some(h),
            _ => None,
        })
    }

    /// Last generated output text.
    pub fn final_output(&self) -> Option<&'a str> {
        self.events()
            .filter_map(|e| match e {
                TraceEvent::Output { text } => Some(text.as_str()),
                _ => None,
            })
            .last()
    }
}

/// Splits a trace into its episodes (records strictly between the start
/// and end markers).
pub fn episodes(records: &[TraceRecord]) -> Result<Vec<Episode<'_>>, MetricsError> {
    let mut out = Vec::new();
    let mut open: Option<(usize, &TraceEvent)> = None;
    for (i, r) in records.iter().enumerate() {
        match (&r.event, open) {
            (TraceEvent::EpisodeStart { .. }, None) => open = Some((i, &r.event)),
            (
                TraceEvent::EpisodeEnd { success },
                Some((
                    s,
                    TraceEvent::EpisodeStart {
                        experiment,
                        paradigm,
                        task,
                        run,
                        budget,
                    },
                )),
            ) => {
                out.push(Episode {
                    experiment: *experiment,
                    paradigm: *paradigm,
                    task: *task,
                    run: *run,
                    budget: *budget,
                    success: *success,
                    records: &records[s + 1..i],
                });
                open = None;
            }
            (TraceEvent::EpisodeStart { .. } | TraceEvent::EpisodeEnd { .. }, _) => {
                return Err(MetricsError::Trace(alloc::format!(
                    "unbalanced episode marker at record {i}"
                )))
            }
            _ => {}
        }
    }
    if open.is_some() {
        return Err(MetricsError::Trace("trace ends inside an episode".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::a2a::Phase;
    use crate::sim::DisclosedField;
    use alloc::vec;

    fn ops(list: &[(Operator, u32)], wait_ms: u64) -> Vec<TraceEvent> {
        let mut v: Vec<TraceEvent> = list
            .iter()
            .map(|&(op, count)| TraceEvent::Operator { op, count })
            .collect();
        v.push(TraceEvent::Wait { ms: wait_ms });
        v
    }

    #[test]
    fn cognitive_load_hand_sum() {
        assert_eq!(cognitive_load(&[], &KlmConstants::default()), 0.0);
        let e = ops(
            &[(Operator::M, 2), (Operator::K, 10), (Operator::P, 1), (Operator::H, 1)],
            3000,
        );
        // 2*1.35 + 10*0.28 + 1.10 + 0.40 + 3.0
        assert!((cognitive_load(&e, &KlmConstants::default()) - 10.0).abs() < 1e-9);
    }

    #[test]
    fn friction_bounds_and_budget() {
        let w = FrictionWeights::default();
        assert_eq!(friction(&[], &w, Some(20.0)), Ok(0.0));
        assert!(matches!(friction(&[], &w, None), Err(MetricsError::Config(_))));
        let many = vec![TraceEvent::Turn; 50];
        assert_eq!(friction(&many, &w, Some(20.0)), Ok(1.0));
        let e = [
            TraceEvent::Turn,
            TraceEvent::Click { count: 5 },
            TraceEvent::TextInput { chars: 3 },
        ];
        // (1 + 0.2*5 + 0.5*1) / 10
        assert!((friction(&e, &w, Some(10.0)).unwrap() - 0.25).abs() < 1e-12);
    }

    fn tokens(useful: u64, exposed: u64) -> TraceEvent {
        TraceEvent::Tokens {
            key: "k".into(),
            tokens_in: 7,
            tokens_out: exposed,
            read: 0,
            useful,
        }
    }

    #[test]
    fn snr_ratio() {
        assert_eq!(snr(&[tokens(10, 10)]), Ok(1.0));
        assert_eq!(snr(&[tokens(50, 100)]), Ok(0.5));
        assert_eq!(snr(&[]), Err(MetricsError::Undefined("no tokens were exposed")));
        assert_eq!(model_tokens(&[tokens(1, 3), tokens(0, 4)]), Some(21));
        assert_eq!(model_tokens(&[]), None);
    }

    fn facts() -> Vec<ExpectedFact> {
        [
            ("identity.legal_name", Value::text("Mira Solberg")),
            ("identity.status", Value::text("PhD candidate")),
            ("research.focus", Value::text("privacy")),
            (
                "research.publications",
                Value::List(vec![Value::text("A (2024)"), Value::text("B (2025)")]),
            ),
            ("preferences.hobbies", Value::List(vec![Value::text("bouldering")])),
        ]
        .into_iter()
        .map(|(p, v)| ExpectedFact {
            field_path: p.into(),
            value: v,
        })
        .collect()
    }

    #[test]
    fn deviation_counts_missing_facts() {
        let f = facts();
        let all = "Mira Solberg, PhD candidate, privacy: A (2024), B (2025); bouldering";
        assert_eq!(result_deviation(all, &f), Ok(0.0));
        let four = "Mira Solberg, PhD candidate, privacy: A (2024); bouldering";
        assert!((result_deviation(four, &f).unwrap() - 0.2).abs() < 1e-12);
        assert_eq!(result_deviation("nothing", &f), Ok(1.0));
        assert!(matches!(result_deviation(all, &[]), Err(MetricsError::Config(_))));
    }

    fn hs(
        archetype: Archetype,
        legitimate: bool,
        terminal: Phase,
        disclosed: &[Granularity],
        tokens: u64,
    ) -> HandshakeSummary {
        HandshakeSummary {
            handshake_id: "h".into(),
            counterpart_id: "c".into(),
            archetype: Some(archetype),
            legitimate: Some(legitimate),
            strictness: Some(5),
            gatekeeper: true,
            terminal,
            zone: None,
            escalated: false,
            requested_fields: vec!["a".into()],
            disclosed: disclosed
                .iter()
                .map(|&g| DisclosedField {
                    field_path: "a".into(),
                    granularity: g,
                })
                .collect(),
            avatar_tokens: tokens,
            counterpart_tokens: 0,
            transcript: vec![],
        }
    }

    #[test]
    fn governance_rates_aggregate() {
        let set = [
            hs(Archetype::DataBroker, false, Phase::Blocked, &[], 100),
            hs(
                Archetype::DataBroker,
                false,
                Phase::Granted,
                &[Granularity::Category],
                200,
            ),
            hs(Archetype::FinTech, true, Phase::Granted, &[Granularity::Bucketed], 300),
            hs(Archetype::Academic, true, Phase::Blocked, &[], 400),
        ];
        let r = governance_rates(&set).unwrap();
        assert_eq!(
            (r.p_safe, r.u_service, r.mean_tokens, r.interactions),
            (50.0, 50.0, 250.0, 4)
        );
        let mut untagged = set[0].clone();
        untagged.legitimate = None;
        assert!(matches!(governance_rates([&untagged]), Err(MetricsError::Trace(_))));
        let mut leak = set[2].clone();
        leak.disclosed[0].field_path = "b".into();
        assert_eq!(minimization_violations([&set[2], &leak]).len(), 1);
    }

    #[test]
    fn single_auto_grant_costs_its_messages() {
        let costs = crate::gatekeeper::TokenCosts::default();
        let h = hs(
            Archetype::Academic,
            true,
            Phase::Granted,
            &[Granularity::Full],
            costs.challenge + costs.auto_grant,
        );
        let r = governance_rates([&h]).unwrap();
        assert_eq!(r.u_service, 100.0);
        assert_eq!(r.mean_tokens, (costs.challenge + costs.auto_grant) as f64);
    }
}
