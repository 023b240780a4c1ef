//! `gatectl` subcommands.
//!
//! Passphrases are read from `SODA_PASSPHRASE` (and `SODA_NEW_PASSPHRASE`
//! for re-sealed outputs) or prompted for on the terminal. No subcommand
//! takes a passphrase argument, and none prints a field value unless
//! `pod inspect --reveal` is given.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use soda_core::gatekeeper::{verify_audit_log, AuditVerdict, Policy};
use soda_core::metrics::{emit_report, MetricsReport, ReportFormat};
use soda_core::pod::PodSession;
use soda_core::sim::{
    render_value, run_scenario_with, AdapterKind, Experiment, Fixtures, LanguageModel, Paradigm, ScenarioConfig,
    ScenarioOutput,
};
use soda_core::updl::SensitivityOntology;

use crate::config::FileConfig;
use crate::live::LiveAdapter;
use crate::podfile::{self, ExportBundle};
use crate::service::{Service, ServiceOptions};
use crate::{Exit, Failure};

#[derive(Debug, Parser)]
#[command(
    name = "gatectl",
    version,
    about = "Personal data pod, gatekeeper and experiment runner"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create, inspect, export, import or migrate pod files.
    #[command(subcommand)]
    Pod(PodCommand),
    /// Run one experiment and write its trace, audit log and reports.
    Sim(SimArgs),
    /// Run the local HITL service.
    Serve(ServeArgs),
    /// Check an audit log's hash chain.
    VerifyAudit { file: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum PodCommand {
    Create {
        #[arg(long)]
        out: PathBuf,
        /// Built-in profile: `persona` or `benchmark`.
        #[arg(long, conflicts_with = "from")]
        fixture: Option<String>,
        /// Profile JSON with `attributes`, `relations` and `logs`.
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// Print node, edge and log counts.
    Inspect {
        pod: PathBuf,
        /// Also print the decrypted profile and logs.
        #[arg(long)]
        reveal: bool,
    },
    /// Write the plaintext export bundle.
    Export {
        pod: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Seal an export bundle into a new pod.
    Import {
        bundle: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-seal a pod through a full export/import cycle.
    Migrate {
        pod: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AdapterArg {
    Scripted,
    LiveEndpoint,
}

#[derive(Debug, Args)]
pub struct SimArgs {
    /// Experiment number: 1, 2 or 3.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub rq: u8,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Refuse nondeterministic adapters and check that a rerun is byte-identical.
    #[arg(long)]
    pub strict_repro: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Restrict to these paradigms (repeatable).
    #[arg(long = "paradigm", value_parser = parse_paradigm)]
    pub paradigms: Vec<Paradigm>,
    #[arg(long, value_enum)]
    pub adapter: Option<AdapterArg>,
}

fn parse_paradigm(s: &str) -> Result<Paradigm, String> {
    Paradigm::parse(s).ok_or_else(|| format!("unknown paradigm `{s}` (Manual, GeneralAgent, StrongRAG, SoDA)"))
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8765)]
    pub port: u16,
    #[arg(long)]
    pub pod: PathBuf,
    /// Also drive the simulated counterparts against the service.
    #[arg(long)]
    pub with_sim: bool,
    /// Seconds an escalation waits for a decision before it is blocked.
    #[arg(long, default_value_t = 30)]
    pub hitl_timeout: u64,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u8).range(0..=10))]
    pub strictness: u8,
    /// Milliseconds between simulated counterparts under `--with-sim`.
    #[arg(long, default_value_t = 2000)]
    pub sim_interval_ms: u64,
}

/// Runs a parsed command, writing human output to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<(), Failure> {
    match cli.command {
        Command::Pod(c) => pod(c, out),
        Command::Sim(a) => sim(&a, out),
        Command::Serve(a) => serve(&a, out),
        Command::VerifyAudit { file } => verify_audit(&file, out),
    }
}

fn say(out: &mut dyn Write, text: impl AsRef<str>) -> Result<(), Failure> {
    writeln!(out, "{}", text.as_ref()).map_err(|e| Failure::new(Exit::Runtime, e.to_string()))
}

fn now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn mount(path: &Path, ontology: &SensitivityOntology) -> Result<(PodSession, String), Failure> {
    let pod = podfile::read_pod(path)?;
    let pass = podfile::passphrase()?;
    let session = pod.mount(&pass, ontology, now())?;
    Ok((session, pass))
}

fn pod(cmd: PodCommand, out: &mut dyn Write) -> Result<(), Failure> {
    let o = SensitivityOntology::default_ontology();
    match cmd {
        PodCommand::Create {
            out: path,
            fixture,
            from,
        } => {
            let profile = podfile::load_profile(fixture.as_deref(), from.as_deref())?;
            let pass = podfile::passphrase()?;
            let pod = podfile::seal_profile(&profile, &o, &pass, now())?;
            podfile::write_pod(&path, &pod)?;
            say(
                out,
                format!("created {} ({} attributes)", path.display(), profile.attributes.len()),
            )
        }
        PodCommand::Inspect { pod, reveal } => {
            let (mut s, _) = mount(&pod, &o)?;
            let c = podfile::counts(&s)?;
            say(out, format!("nodes {}\nedges {}\nlogs {}", c.nodes, c.edges, c.logs))?;
            if reveal {
                let g = s.graph()?;
                for n in g.nodes() {
                    say(out, format!("{} = {}", n.field_path, render_value(&n.value)))?;
                }
                for l in s.logs()? {
                    say(out, format!("log {} [{}] {}", l.timestamp, l.tags.join(","), l.text))?;
                }
            }
            s.unmount(now())?;
            Ok(())
        }
        PodCommand::Export { pod, out: path } => {
            let (mut s, _) = mount(&pod, &o)?;
            let bundle = podfile::export_bundle(&s)?;
            s.unmount(now())?;
            let text = serde_json::to_string_pretty(&bundle).map_err(|e| Failure::new(Exit::Format, e.to_string()))?;
            podfile::write_atomic(&path, text.as_bytes())?;
            say(out, format!("exported {} ({} logs)", path.display(), bundle.logs.len()))
        }
        PodCommand::Import { bundle, out: path } => {
            let text = fs::read_to_string(&bundle)
                .map_err(|e| Failure::new(Exit::Format, format!("{}: {e}", bundle.display())))?;
            let b: ExportBundle = serde_json::from_str(&text)
                .map_err(|e| Failure::new(Exit::Format, format!("{}: {e}", bundle.display())))?;
            let (graph, logs) = podfile::import_bundle(&b, &o)?;
            let pass = podfile::new_passphrase(&podfile::passphrase()?);
            let pod = soda_core::pod::create_pod(&graph, &logs, &pass, &mut rand_core::OsRng)?;
            podfile::write_pod(&path, &pod)?;
            say(
                out,
                format!("imported {} ({} nodes)", path.display(), graph.node_count()),
            )
        }
        PodCommand::Migrate { pod, out: path } => {
            let (mut s, pass) = mount(&pod, &o)?;
            let sealed = podfile::migrate(&s, &o, &podfile::new_passphrase(&pass))?;
            let c = podfile::counts(&s)?;
            s.unmount(now())?;
            podfile::write_pod(&path, &sealed)?;
            say(
                out,
                format!(
                    "migrated {} -> {} (nodes {}, edges {}, logs {})",
                    pod.display(),
                    path.display(),
                    c.nodes,
                    c.edges,
                    c.logs
                ),
            )
        }
    }
}

/// Resolves the scenario: config file, then command-line overrides.
pub fn scenario(a: &SimArgs) -> Result<(ScenarioConfig, FileConfig), Failure> {
    let file = match &a.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let mut c = file.scenario.clone();
    c.experiment = Experiment::from_number(a.rq).ok_or_else(|| Failure::new(Exit::Config, "rq must be 1, 2 or 3"))?;
    if let Some(seed) = a.seed {
        c.seed = seed;
    }
    if !a.paradigms.is_empty() {
        c.paradigms = a.paradigms.clone();
    }
    match a.adapter {
        Some(AdapterArg::Scripted) => c.adapter = AdapterKind::Scripted,
        Some(AdapterArg::LiveEndpoint) => c.adapter = AdapterKind::LiveEndpoint,
        None => {}
    }
    c.validate()?;
    Ok((c, file))
}

fn model(c: &ScenarioConfig, file: &FileConfig, fixtures: &Fixtures) -> Result<Box<dyn LanguageModel>, Failure> {
    Ok(match c.adapter {
        AdapterKind::Scripted => Box::new(fixtures.script.clone()),
        AdapterKind::LiveEndpoint => {
            let live = file
                .live
                .clone()
                .ok_or_else(|| Failure::new(Exit::Config, "live-endpoint adapter needs a [live] table in --config"))?;
            Box::new(LiveAdapter::new(live, fixtures.script.clone()))
        }
    })
}

fn sim(a: &SimArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let (config, file) = scenario(a)?;
    let fixtures = Fixtures::builtin()?;
    let mut m = model(&config, &file, &fixtures)?;
    if a.strict_repro && !m.is_deterministic() {
        return Err(Failure::new(
            Exit::StrictRepro,
            "--strict-repro forbids nondeterministic adapters",
        ));
    }
    let run = |m: &mut dyn LanguageModel| -> Result<ScenarioOutput, Failure> {
        let o = run_scenario_with(&config, &fixtures, m)?;
        o.trace
            .validate()
            .map_err(|e| Failure::new(Exit::Runtime, format!("invalid trace: {e}")))?;
        Ok(o)
    };
    let output = run(m.as_mut())?;
    let trace = output.trace.to_jsonl();
    if a.strict_repro {
        let mut again = model(&config, &file, &fixtures)?;
        if run(again.as_mut())?.trace.to_jsonl() != trace {
            return Err(Failure::new(Exit::StrictRepro, "rerun produced a different trace"));
        }
    }
    let report = MetricsReport::evaluate(config.experiment, &output.trace, &fixtures)
        .map_err(|e| Failure::new(Exit::Runtime, e.to_string()))?;
    fs::create_dir_all(&a.out).map_err(|e| Failure::new(Exit::Format, format!("{}: {e}", a.out.display())))?;
    let mut files = vec![
        ("trace.jsonl".to_string(), trace),
        ("audit.log".to_string(), output.audit.to_text()),
    ];
    for f in ReportFormat::ALL {
        files.push((format!("report.{}", f.extension()), emit_report(&report, f)));
    }
    for (name, text) in &files {
        podfile::write_atomic(&a.out.join(name), text.as_bytes())?;
    }
    say(out, emit_report(&report, ReportFormat::TableText).trim_end())?;
    say(out, format!("wrote {} files to {}", files.len(), a.out.display()))
}

fn serve(a: &ServeArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let o = SensitivityOntology::default_ontology();
    let (session, _) = mount(&a.pod, &o)?;
    let options = ServiceOptions {
        hitl_timeout: Duration::from_secs(a.hitl_timeout),
        ..Default::default()
    };
    let service = Service::new(session, Policy::with_strictness(a.strictness), options)?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::new(Exit::Runtime, e.to_string()))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(("127.0.0.1", a.port))
            .await
            .map_err(|e| Failure::new(Exit::Runtime, format!("port {}: {e}", a.port)))?;
        let addr = listener
            .local_addr()
            .map_err(|e| Failure::new(Exit::Runtime, e.to_string()))?;
        say(out, format!("listening on http://{addr}"))?;
        out.flush().ok();
        if a.with_sim {
            service.spawn_sim(Fixtures::builtin()?.agents, Duration::from_millis(a.sim_interval_ms));
        }
        crate::service::serve(service, listener)
            .await
            .map_err(|e| Failure::new(Exit::Runtime, e.to_string()))
    })
}

fn verify_audit(path: &Path, out: &mut dyn Write) -> Result<(), Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::new(Exit::Format, format!("{}: {e}", path.display())))?;
    match verify_audit_log(&text) {
        AuditVerdict::Valid => say(out, format!("valid ({} records)", text.lines().count())),
        AuditVerdict::FirstBad(i) => Err(Failure::new(
            Exit::InvalidAudit,
            format!("first bad record at index {i}"),
        )),
    }
}
