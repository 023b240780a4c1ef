use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{
    cognitive_load, episodes, friction, governance_rates, interaction_counts, model_tokens, result_deviation,
    token_exposure, wait_secs, Episode, ExpectedFact, FrictionWeights, KlmConstants, MetricsError,
};
use crate::sim::{Experiment, Fixtures, Paradigm, TaskId, Trace};

pub const REPORT_VERSION: u32 = 1;

/// Scale of the SNR index column (ratio times this).
const SNR_INDEX_SCALE: f64 = 100.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rq1Row {
    pub paradigm: Paradigm,
    /// `None` on the per-paradigm aggregate row.
    pub task: Option<TaskId>,
    pub runs: u32,
    pub completions: u32,
    pub completion_rate: f64,
    pub eta: f64,
    /// Mean cognitive load per run, seconds.
    pub l_cog: f64,
    pub snr: Option<f64>,
    pub snr_index: Option<f64>,
    /// Mean model tokens per run; summed over tasks on the aggregate row.
    pub tokens: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReductionRow {
    pub versus: Paradigm,
    pub l_cog_reduction_pct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rq1Report {
    pub rows: Vec<Rq1Row>,
    pub aggregate: Vec<Rq1Row>,
    /// Cognitive-load reduction of SoDA against each other paradigm.
    pub reductions: Vec<ReductionRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rq2Row {
    pub paradigm: Paradigm,
    pub tokens: u64,
    pub turns: u64,
    pub chars: u64,
    pub clicks: u64,
    /// Virtual seconds spent waiting for results.
    pub time_s: f64,
    pub deviation: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rq2Report {
    pub rows: Vec<Rq2Row>,
    pub token_reduction_pct: Option<f64>,
    pub time_ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rq3Row {
    pub configuration: String,
    /// `None` for the ungoverned baseline.
    pub strictness: Option<u8>,
    pub p_safe: f64,
    pub u_service: f64,
    pub c_token: f64,
    pub interactions: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rq3Report {
    pub rows: Vec<Rq3Row>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub v: u32,
    pub rq1: Option<Rq1Report>,
    pub rq2: Option<Rq2Report>,
    pub rq3: Option<Rq3Report>,
}

impl Default for MetricsReport {
    fn default() -> Self {
        Self {
            v: REPORT_VERSION,
            rq1: None,
            rq2: None,
            rq3: None,
        }
    }
}

impl MetricsReport {
    /// Evaluates the report section matching `experiment`.
    pub fn evaluate(experiment: Experiment, trace: &Trace, fixtures: &Fixtures) -> Result<Self, MetricsError> {
        let mut r = Self::default();
        match experiment {
            Experiment::Rq1 => {
                r.rq1 = Some(Rq1Report::evaluate(
                    trace,
                    &KlmConstants::default(),
                    &FrictionWeights::default(),
                )?)
            }
            Experiment::Rq2 => r.rq2 = Some(Rq2Report::evaluate(trace, &Rq2Report::expectation(fixtures))?),
            Experiment::Rq3 => r.rq3 = Some(Rq3Report::evaluate(trace)?),
        }
        Ok(r)
    }
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = xs.into_iter().fold((0.0, 0u32), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / f64::from(n)
    }
}

fn pct(a: u32, b: u32) -> f64 {
    if b == 0 {
        0.0
    } else {
        100.0 * f64::from(a) / f64::from(b)
    }
}

fn snr_of(useful: u64, exposed: u64) -> Option<f64> {
    (exposed > 0).then(|| (useful as f64 / exposed as f64).min(1.0))
}

impl Rq1Report {
    pub fn evaluate(trace: &Trace, k: &KlmConstants, w: &FrictionWeights) -> Result<Self, MetricsError> {
        k.validate()?;
        let eps = episodes(&trace.records)?;
        let mut groups: BTreeMap<(Paradigm, TaskId), Vec<&Episode<'_>>> = BTreeMap::new();
        for e in eps.iter().filter(|e| e.experiment == Experiment::Rq1) {
            let task = e
                .task
                .ok_or_else(|| MetricsError::Trace("task episode without task id".into()))?;
            groups.entry((e.paradigm, task)).or_default().push(e);
        }
        let mut rows = Vec::new();
        let mut exposure: BTreeMap<Paradigm, (u64, u64)> = BTreeMap::new();
        for ((paradigm, task), runs) in &groups {
            let mut etas = Vec::new();
            for e in runs {
                etas.push(friction(e.events(), w, e.budget)?);
            }
            let (u, x) = runs
                .iter()
                .map(|e| token_exposure(e.events()))
                .fold((0, 0), |(a, b), (c, d)| (a + c, b + d));
            let ex = exposure.entry(*paradigm).or_default();
            ex.0 += u;
            ex.1 += x;
            let tokens: Vec<Option<u64>> = runs.iter().map(|e| model_tokens(e.events())).collect();
            let completions = runs.iter().filter(|e| e.success).count() as u32;
            let snr = snr_of(u, x);
            rows.push(Rq1Row {
                paradigm: *paradigm,
                task: Some(*task),
                runs: runs.len() as u32,
                completions,
                completion_rate: pct(completions, runs.len() as u32),
                eta: mean(etas),
                l_cog: mean(runs.iter().map(|e| cognitive_load(e.events(), k))),
                snr,
                snr_index: snr.map(|s| s * SNR_INDEX_SCALE),
                tokens: tokens
                    .iter()
                    .any(Option::is_some)
                    .then(|| mean(tokens.iter().map(|t| t.unwrap_or(0) as f64))),
            });
        }
        let mut aggregate = Vec::new();
        for (&paradigm, &(u, x)) in &exposure {
            let of: Vec<&Rq1Row> = rows.iter().filter(|r| r.paradigm == paradigm).collect();
            let (runs, completions) = of.iter().fold((0, 0), |(a, b), r| (a + r.runs, b + r.completions));
            let snr = snr_of(u, x);
            aggregate.push(Rq1Row {
                paradigm,
                task: None,
                runs,
                completions,
                completion_rate: pct(completions, runs),
                eta: mean(of.iter().map(|r| r.eta)),
                l_cog: mean(of.iter().map(|r| r.l_cog)),
                snr,
                snr_index: snr.map(|s| s * SNR_INDEX_SCALE),
                tokens: of
                    .iter()
                    .filter_map(|r| r.tokens)
                    .fold(None, |acc: Option<f64>, t| Some(acc.unwrap_or(0.0) + t)),
            });
        }
        let reductions = match aggregate.iter().find(|r| r.paradigm == Paradigm::SoDA) {
            Some(soda) => aggregate
                .iter()
                .filter(|r| r.paradigm != Paradigm::SoDA && r.l_cog > 0.0)
                .map(|r| ReductionRow {
                    versus: r.paradigm,
                    l_cog_reduction_pct: 100.0 * (1.0 - soda.l_cog / r.l_cog),
                })
                .collect(),
            None => Vec::new(),
        };
        Ok(Self {
            rows,
            aggregate,
            reductions,
        })
    }

    pub fn aggregate_for(&self, p: Paradigm) -> Option<&Rq1Row> {
        self.aggregate.iter().find(|r| r.paradigm == p)
    }
}

impl Rq2Report {
    /// The migration's required facts with their ground-truth persona values.
    pub fn expectation(fixtures: &Fixtures) -> Vec<ExpectedFact> {
        fixtures
            .rq2
            .expected_facts
            .iter()
            .filter_map(|p| {
                fixtures.profiles.persona.value(p).map(|v| ExpectedFact {
                    field_path: p.clone(),
                    value: v.clone(),
                })
            })
            .collect()
    }

    pub fn evaluate(trace: &Trace, expected: &[ExpectedFact]) -> Result<Self, MetricsError> {
        let mut rows = Vec::new();
        for e in episodes(&trace.records)?
            .iter()
            .filter(|e| e.experiment == Experiment::Rq2)
        {
            let c = interaction_counts(e.events());
            let deviation = match e.final_output() {
                Some(text) => Some(result_deviation(text, expected)?),
                None => None,
            };
            rows.push(Rq2Row {
                paradigm: e.paradigm,
                tokens: model_tokens(e.events()).unwrap_or(0),
                turns: c.turns,
                chars: c.chars,
                clicks: c.clicks,
                time_s: wait_secs(e.events()),
                deviation,
            });
        }
        let find = |p: Paradigm| rows.iter().find(|r| r.paradigm == p);
        let (token_reduction_pct, time_ratio) = match (find(Paradigm::Manual), find(Paradigm::SoDA)) {
            (Some(m), Some(s)) => (
                (m.tokens > 0).then(|| 100.0 * (1.0 - s.tokens as f64 / m.tokens as f64)),
                (m.time_s > 0.0).then(|| s.time_s / m.time_s),
            ),
            _ => (None, None),
        };
        Ok(Self {
            rows,
            token_reduction_pct,
            time_ratio,
        })
    }

    pub fn row(&self, p: Paradigm) -> Option<&Rq2Row> {
        self.rows.iter().find(|r| r.paradigm == p)
    }
}

impl Rq3Report {
    pub fn evaluate(trace: &Trace) -> Result<Self, MetricsError> {
        let mut baseline = Vec::new();
        let mut cells: BTreeMap<u8, Vec<_>> = BTreeMap::new();
        for h in trace.handshakes() {
            match (h.gatekeeper, h.strictness) {
                (false, _) => baseline.push(h),
                (true, Some(s)) => cells.entry(s).or_default().push(h),
                (true, None) => {
                    return Err(MetricsError::Trace(format!(
                        "handshake {} has no strictness",
                        h.handshake_id
                    )))
                }
            }
        }
        let mut rows = Vec::new();
        let mut push = |configuration: String, strictness, set: &[&crate::sim::HandshakeSummary]| {
            governance_rates(set.iter().copied()).map(|g| {
                rows.push(Rq3Row {
                    configuration,
                    strictness,
                    p_safe: g.p_safe,
                    u_service: g.u_service,
                    c_token: g.mean_tokens,
                    interactions: g.interactions,
                })
            })
        };
        if !baseline.is_empty() {
            push("Baseline".into(), None, &baseline)?;
        }
        for (s, set) in &cells {
            push(format!("S={s}"), Some(*s), set)?;
        }
        Ok(Self { rows })
    }

    pub fn row(&self, strictness: Option<u8>) -> Option<&Rq3Row> {
        self.rows.iter().find(|r| r.strictness == strictness)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    TableText,
    Delimited,
    Structured,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [
        ReportFormat::TableText,
        ReportFormat::Delimited,
        ReportFormat::Structured,
    ];

    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::TableText => "txt",
            ReportFormat::Delimited => "csv",
            ReportFormat::Structured => "json",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table" | "table-text" | "txt" => Ok(ReportFormat::TableText),
            "delimited" | "csv" => Ok(ReportFormat::Delimited),
            "structured" | "json" => Ok(ReportFormat::Structured),
            other => Err(MetricsError::UnknownFormat(other.into())),
        }
    }
}

pub fn emit_report(report: &MetricsReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::TableText => table_text(report),
        ReportFormat::Delimited => delimited(report),
        ReportFormat::Structured => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
    }
}

pub fn parse_structured(text: &str) -> Result<MetricsReport, MetricsError> {
    serde_json::from_str(text).map_err(|e| MetricsError::Parse(e.to_string()))
}

fn opt(x: Option<f64>, f: impl Fn(f64) -> String) -> String {
    x.map_or_else(|| "N/A".into(), f)
}

fn f2(x: f64) -> String {
    format!("{x:.2}")
}

fn f3(x: f64) -> String {
    format!("{x:.3}")
}

fn task_label(t: Option<TaskId>) -> String {
    t.map_or_else(|| "Aggregate".into(), |t| format!("{t:?}"))
}

fn render_table(out: &mut String, title: &str, header: &[&str], rows: &[Vec<String>]) {
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |out: &mut String, cells: &mut dyn Iterator<Item = &str>| {
        let mut first = true;
        for (c, w) in cells.zip(&width) {
            if !first {
                out.push_str("  ");
            }
            let pad = w - c.chars().count();
            if first {
                out.push_str(c);
                out.extend(core::iter::repeat(' ').take(pad));
            } else {
                out.extend(core::iter::repeat(' ').take(pad));
                out.push_str(c);
            }
            first = false;
        }
        while out.ends_with(' ') {
            out.pop();
        }
        out.push('\n');
    };
    let _ = writeln!(out, "\n{title}");
    line(out, &mut header.iter().copied());
    let rule: Vec<String> = width.iter().map(|w| "-".repeat(*w)).collect();
    line(out, &mut rule.iter().map(String::as_str));
    for r in rows {
        line(out, &mut r.iter().map(String::as_str));
    }
}

fn rq1_cells(r: &Rq1Row) -> Vec<String> {
    vec![
        r.paradigm.to_string(),
        task_label(r.task),
        format!("{}/{}", r.completions, r.runs),
        f2(r.completion_rate),
        f3(r.eta),
        f2(r.l_cog),
        opt(r.snr, |x| format!("{x:.4}")),
        opt(r.snr_index, f2),
        opt(r.tokens, f2),
    ]
}

fn table_text(report: &MetricsReport) -> String {
    let mut out = format!("metrics report v{}\n", report.v);
    if let Some(r) = &report.rq1 {
        let header = [
            "Paradigm",
            "Task",
            "Done",
            "Completion %",
            "eta",
            "L_cog (s)",
            "SNR",
            "SNR index",
            "Tokens",
        ];
        let rows: Vec<_> = r.rows.iter().map(rq1_cells).collect();
        render_table(&mut out, "Task orchestration by paradigm and task", &header, &rows);
        let agg: Vec<_> = r.aggregate.iter().map(rq1_cells).collect();
        render_table(&mut out, "Task orchestration aggregate", &header, &agg);
        let red: Vec<_> = r
            .reductions
            .iter()
            .map(|x| vec![x.versus.to_string(), f2(x.l_cog_reduction_pct)])
            .collect();
        render_table(
            &mut out,
            "SoDA cognitive-load reduction",
            &["Versus", "Reduction %"],
            &red,
        );
    }
    if let Some(r) = &report.rq2 {
        let rows: Vec<_> = r
            .rows
            .iter()
            .map(|x| {
                vec![
                    x.paradigm.to_string(),
                    x.tokens.to_string(),
                    x.turns.to_string(),
                    x.chars.to_string(),
                    x.clicks.to_string(),
                    f2(x.time_s),
                    opt(x.deviation, f3),
                ]
            })
            .collect();
        render_table(
            &mut out,
            "Cross-platform migration",
            &[
                "Method",
                "Tokens",
                "Turns",
                "Typed chars",
                "Clicks",
                "Time (s)",
                "Deviation",
            ],
            &rows,
        );
        let _ = writeln!(
            out,
            "\ntoken reduction %: {}\ntime ratio: {}",
            opt(r.token_reduction_pct, f2),
            opt(r.time_ratio, |x| format!("{x:.4}"))
        );
    }
    if let Some(r) = &report.rq3 {
        let rows: Vec<_> = r
            .rows
            .iter()
            .map(|x| vec![x.configuration.clone(), f2(x.p_safe), f2(x.u_service), f2(x.c_token)])
            .collect();
        render_table(
            &mut out,
            "Strictness sweep",
            &["Configuration", "P_safe %", "U_service %", "C_token"],
            &rows,
        );
    }
    out
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn delimited(report: &MetricsReport) -> String {
    let mut out = String::from("section,row,column,value\n");
    let mut put = |section: &str, row: &str, column: &str, value: String| {
        let _ = writeln!(out, "{section},{row},{column},{value}");
    };
    if let Some(r) = &report.rq1 {
        for x in r.rows.iter().chain(&r.aggregate) {
            let row = format!("{}/{}", x.paradigm, task_label(x.task));
            put("rq1", &row, "runs", x.runs.to_string());
            put("rq1", &row, "completions", x.completions.to_string());
            put("rq1", &row, "completion_rate", num(x.completion_rate));
            put("rq1", &row, "eta", num(x.eta));
            put("rq1", &row, "l_cog", num(x.l_cog));
            put("rq1", &row, "snr", x.snr.map(num).unwrap_or_default());
            put("rq1", &row, "snr_index", x.snr_index.map(num).unwrap_or_default());
            put("rq1", &row, "tokens", x.tokens.map(num).unwrap_or_default());
        }
        for x in &r.reductions {
            put(
                "rq1",
                &format!("SoDA/vs {}", x.versus),
                "l_cog_reduction_pct",
                num(x.l_cog_reduction_pct),
            );
        }
    }
    if let Some(r) = &report.rq2 {
        for x in &r.rows {
            let row = x.paradigm.as_str();
            put("rq2", row, "tokens", x.tokens.to_string());
            put("rq2", row, "turns", x.turns.to_string());
            put("rq2", row, "chars", x.chars.to_string());
            put("rq2", row, "clicks", x.clicks.to_string());
            put("rq2", row, "time_s", num(x.time_s));
            put("rq2", row, "deviation", x.deviation.map(num).unwrap_or_default());
        }
        put(
            "rq2",
            "summary",
            "token_reduction_pct",
            r.token_reduction_pct.map(num).unwrap_or_default(),
        );
        put(
            "rq2",
            "summary",
            "time_ratio",
            r.time_ratio.map(num).unwrap_or_default(),
        );
    }
    if let Some(r) = &report.rq3 {
        for x in &r.rows {
            let row = x.configuration.as_str();
            put("rq3", row, "p_safe", num(x.p_safe));
            put("rq3", row, "u_service", num(x.u_service));
            put("rq3", row, "c_token", num(x.c_token));
            put("rq3", row, "interactions", x.interactions.to_string());
        }
    }
    out
}
