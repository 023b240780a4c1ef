//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Run with `cargo test -p soda-avatar --test acceptance`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use soda_core::a2a::{decode, replay, step, Body, Event, HandshakeState, Message, Phase, StepContext, Transcript};
use soda_core::gatekeeper::{route, verify_audit_log, AuditLog, AuditVerdict, Policy, PurposeTable, Zone};
use soda_core::metrics::{Rq1Report, Rq2Report, Rq3Report};
use soda_core::pod::{create_pod, embed, LogEntry, PodError, SealedPod};
use soda_core::sim::{
    run_scenario_with, Experiment, Fixtures, Paradigm, ScenarioConfig, ScenarioOutput, SIM_PASSPHRASE,
};
use soda_core::updl::{build_profile_graph, serialize, Attribute, Relation, SensitivityOntology, Value};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol + 1e-9
}

fn run(e: Experiment) -> (ScenarioOutput, Fixtures) {
    let f = Fixtures::builtin().unwrap();
    let mut model = f.script.clone();
    let out = run_scenario_with(&ScenarioConfig::for_experiment(e, 42), &f, &mut model).unwrap();
    (out, f)
}

fn rq3() -> Outcome {
    let t = Instant::now();
    let (out, _) = run(Experiment::Rq3);
    let r = Rq3Report::evaluate(&out.trace).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed().as_secs_f64();
    let row = |s| r.row(s).ok_or_else(|| format!("missing row {s:?}"));
    let base = row(None)?;
    ensure(base.p_safe == 0.0 && base.u_service == 100.0, || {
        format!("baseline = ({}, {})", base.p_safe, base.u_service)
    })?;
    let governed: u64 = [0, 5, 10]
        .iter()
        .map(|&s| row(Some(s)).map(|x| x.interactions))
        .sum::<Result<_, _>>()?;
    ensure(governed == 360, || format!("{governed} governed interactions"))?;
    for (s, u, p) in [(0, 100.0, 97.5), (5, 100.0, 97.5), (10, 50.0, 100.0)] {
        let x = row(Some(s))?;
        ensure(x.u_service == u, || format!("U_service(S={s}) = {}", x.u_service))?;
        ensure(x.p_safe == p, || format!("P_safe(S={s}) = {}", x.p_safe))?;
    }
    let (c5, c10) = (row(Some(5))?.c_token, row(Some(10))?.c_token);
    ensure(c5 > c10 && within(c5 / c10, 3.0, 0.5), || {
        format!("cost ratio {c5}/{c10}")
    })?;
    ensure(elapsed < 10.0, || format!("runtime {elapsed:.2} s"))?;
    Ok(format!(
        "U=100/100/50 P=97.5/97.5/100 ratio {:.3} in {elapsed:.2} s",
        c5 / c10
    ))
}

fn rq2() -> Outcome {
    let (out, f) = run(Experiment::Rq2);
    let r = Rq2Report::evaluate(&out.trace, &Rq2Report::expectation(&f)).map_err(|e| e.to_string())?;
    let m = r.row(Paradigm::Manual).ok_or("no Manual row")?;
    let s = r.row(Paradigm::SoDA).ok_or("no SoDA row")?;
    ensure(r.rows.len() == 2, || format!("{} rows", r.rows.len()))?;
    ensure((m.turns, m.chars) == (4, 282), || {
        format!("Manual {} turns / {} chars", m.turns, m.chars)
    })?;
    ensure((s.turns, s.chars) == (1, 0), || {
        format!("SoDA {} turns / {} chars", s.turns, s.chars)
    })?;
    let red = r.token_reduction_pct.ok_or("no token reduction")?;
    ensure(within(red, 31.8, 5.0), || format!("token reduction {red}"))?;
    let ratio = r.time_ratio.ok_or("no time ratio")?;
    let target = 11.38 / 25.21;
    ensure(within(ratio, target, 0.1 * target), || format!("time ratio {ratio}"))?;
    Ok(format!(
        "tokens {}->{} ({red:.2}%), time ratio {ratio:.4}",
        m.tokens, s.tokens
    ))
}

fn rq1() -> Outcome {
    let (out, _) = run(Experiment::Rq1);
    let r = Rq1Report::evaluate(&out.trace, &Default::default(), &Default::default()).map_err(|e| e.to_string())?;
    let agg = |p| r.aggregate_for(p).ok_or_else(|| format!("no aggregate for {p:?}"));
    let expected = [
        (Paradigm::Manual, 0.925, 16),
        (Paradigm::GeneralAgent, 0.55, 10),
        (Paradigm::StrongRAG, 0.35, 13),
        (Paradigm::SoDA, 0.05, 15),
    ];
    for (p, eta, n) in expected {
        let a = agg(p)?;
        ensure(within(a.eta, eta, 0.05), || format!("eta({p:?}) = {}", a.eta))?;
        ensure(a.runs == 16 && a.completions == n, || {
            format!("{p:?} completed {}/{}", a.completions, a.runs)
        })?;
    }
    for (p, target) in [
        (Paradigm::StrongRAG, 72.4),
        (Paradigm::GeneralAgent, 77.0),
        (Paradigm::Manual, 88.0),
    ] {
        let red = r
            .reductions
            .iter()
            .find(|x| x.versus == p)
            .ok_or_else(|| format!("no reduction vs {p:?}"))?
            .l_cog_reduction_pct;
        ensure(within(red, target, 3.0), || format!("reduction vs {p:?} = {red}"))?;
    }
    let snr = |p| agg(p).and_then(|a| a.snr.ok_or_else(|| format!("no SNR for {p:?}")));
    let order = [
        snr(Paradigm::SoDA)?,
        snr(Paradigm::StrongRAG)?,
        snr(Paradigm::Manual)?,
        snr(Paradigm::GeneralAgent)?,
    ];
    ensure(order.windows(2).all(|w| w[0] > w[1]), || format!("SNR order {order:?}"))?;
    let tokens = agg(Paradigm::SoDA)?.tokens.ok_or("no SoDA tokens")?;
    ensure(within(tokens, 2989.0, 298.9), || format!("SoDA tokens {tokens}"))?;
    Ok(format!("eta ok, SoDA tokens {tokens}, SNR {order:.4?}"))
}

fn oracle_zone(s: f64, r: f64) -> Zone {
    let risk = s * r;
    if risk >= 80.0 {
        Zone::Block
    } else if risk >= 25.0 || r >= 8.0 {
        Zone::Negotiate
    } else {
        Zone::Auto
    }
}

fn routing() -> Outcome {
    let p = Policy::default();
    let zone = |s: f64, r: f64| {
        route(s, r, &p)
            .map(|d| d.zone)
            .map_err(|e| format!("route({s}, {r}): {e}"))
    };
    for s in 0..=10 {
        for r in 0..=10 {
            let (sf, rf) = (f64::from(s), f64::from(r));
            let z = zone(sf, rf)?;
            ensure(z == oracle_zone(sf, rf), || format!("({s}, {r}) -> {z:?}"))?;
            if s < 10 {
                ensure(zone(sf + 1.0, rf)? >= z, || format!("not monotone in S at ({s}, {r})"))?;
            }
            if r < 10 {
                ensure(zone(sf, rf + 1.0)? >= z, || format!("not monotone in R at ({s}, {r})"))?;
            }
            ensure(r < 8 || z != Zone::Auto, || format!("hard rule broken at ({s}, {r})"))?;
        }
    }
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    for _ in 0..10_000 {
        let (s, r): (f64, f64) = (rng.gen_range(0.0..=10.0), rng.gen_range(0.0..=10.0));
        let z = zone(s, r)?;
        ensure(z == oracle_zone(s, r), || format!("({s}, {r}) -> {z:?}"))?;
        ensure(r < 8.0 || z != Zone::Auto, || format!("hard rule broken at ({s}, {r})"))?;
        let (s2, r2) = (rng.gen_range(s..=10.0), rng.gen_range(r..=10.0));
        ensure(zone(s2, r2)? >= z, || {
            format!("not monotone from ({s}, {r}) to ({s2}, {r2})")
        })?;
    }
    Ok("121 grid cells and 10000 random pairs".into())
}

fn protocol() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    for _ in 0..100_000 {
        let mut b = vec![0u8; rng.gen_range(0..300)];
        rng.fill_bytes(&mut b);
        if b.len() >= 4 && rng.gen_bool(0.5) {
            let n = (b.len() - 4) as u32;
            b[..4].copy_from_slice(&n.to_le_bytes());
        }
        let _ = decode(&b);
    }

    let f = Fixtures::builtin().unwrap();
    let o = SensitivityOntology::default_ontology();
    let purposes = PurposeTable::default_table();
    let session = f
        .profiles
        .benchmark
        .seal(&o, 42)
        .unwrap()
        .mount(SIM_PASSPHRASE, &o, 0)
        .unwrap();
    let mut messages = Vec::new();
    for a in &f.agents {
        let d = a.declaration();
        messages.push(Message::new("s", Body::IntentRequest(d.clone())));
        messages.push(Message::new(
            "s",
            Body::ChallengeResponse {
                declared_purpose: d.declared_purpose.clone(),
                requested_fields: d.requested_fields.clone(),
            },
        ));
        messages.push(Message::new("s", Body::ProofOfValue(a.proof_of_value.clone())));
    }
    messages.push(Message::new("s", Body::HitlDecision { approve: true }));
    messages.push(Message::new("s", Body::HitlDecision { approve: false }));
    messages.push(Message::new("s", Body::Close));
    let policies: Vec<Policy> = [0, 5, 10].into_iter().map(Policy::with_strictness).collect();
    for _ in 0..100_000 {
        let policy = policies.choose(&mut rng).unwrap();
        let ctx = StepContext {
            ontology: &o,
            purposes: &purposes,
            policy,
            source: &session,
        };
        let mut state = HandshakeState::idle();
        for _ in 0..rng.gen_range(1..10) {
            let event = match rng.gen_range(0..8) {
                0 => Event::Invalid,
                1 => Event::Timeout,
                2 => Event::TransportFailure,
                3 => Event::Proceed,
                _ => Event::Inbound(messages.choose(&mut rng).unwrap().clone()),
            };
            let (next, out) = step(&state, &event, &ctx);
            ensure(Phase::ALL.contains(&next.phase), || {
                format!("undeclared phase {:?}", next.phase)
            })?;
            if next.phase == Phase::Blocked {
                ensure(out.iter().all(|m| m.body.disclosures().is_empty()), || {
                    format!("Blocked disclosed on {event:?}")
                })?;
            }
            state = next;
        }
    }

    let mut replayed = 0;
    for e in [Experiment::Rq1, Experiment::Rq2, Experiment::Rq3] {
        let (out, _) = run(e);
        let profile = if e == Experiment::Rq2 {
            &f.profiles.persona
        } else {
            &f.profiles.benchmark
        };
        let s = profile.seal(&o, 42).unwrap().mount(SIM_PASSPHRASE, &o, 0).unwrap();
        for h in out.trace.handshakes().filter(|h| h.gatekeeper) {
            let policy = Policy::with_strictness(h.strictness.unwrap_or(5));
            let ctx = StepContext {
                ontology: &o,
                purposes: &purposes,
                policy: &policy,
                source: &s,
            };
            let t = Transcript::from_text(&h.transcript.join("\n")).map_err(|e| e.to_string())?;
            let a = replay(&t, &ctx).map_err(|e| format!("{}: {e}", h.handshake_id))?;
            let b = replay(&t, &ctx).map_err(|e| format!("{}: {e}", h.handshake_id))?;
            ensure(a == b && a.phase == h.terminal, || {
                format!("{} replayed to {:?}", h.handshake_id, a.phase)
            })?;
            replayed += 1;
        }
    }
    Ok(format!(
        "100000 frames, 100000 sequences, {replayed} transcripts replayed"
    ))
}

fn pod_integrity() -> Outcome {
    const PASS: &str = "acceptance passphrase";
    let o = SensitivityOntology::default_ontology();
    let attrs = vec![
        Attribute::new(
            "identity.legal_name",
            "identity.legal_name",
            Value::text("Mira Solberg"),
        ),
        Attribute::new("research.focus", "research.focus", Value::text("personal agents")),
        Attribute::new("assets.portfolio", "assets.portfolio", Value::Int(248_500)),
        Attribute::new(
            "preferences.public_interests",
            "preferences.public_interests",
            Value::text("climbing"),
        ),
    ];
    let rels = vec![Relation::new("identity.legal_name", "works_on", "research.focus")];
    let g = build_profile_graph(&attrs, &rels, &o, 0).map_err(|e| e.to_string())?;

    let mut rng = ChaCha20Rng::seed_from_u64(5);
    for _ in 0..20 {
        let mut a = attrs.clone();
        a.shuffle(&mut rng);
        let shuffled = build_profile_graph(&a, &rels, &o, 0).map_err(|e| e.to_string())?;
        ensure(serialize(&shuffled) == serialize(&g), || {
            "serialization depends on insertion order".into()
        })?;
    }

    let logs = vec![
        LogEntry::new("drafted the agents paper", 1, vec![]),
        LogEntry::new("coffee on the coast", 2, vec![]),
    ];
    let pod = create_pod(&g, &logs, PASS, &mut rng).map_err(|e| e.to_string())?;
    let mut s = pod.mount(PASS, &o, 0).map_err(|e| e.to_string())?;
    ensure(
        serialize(s.graph().unwrap()) == serialize(&g) && s.logs().unwrap() == &logs[..],
        || "round trip differs".into(),
    )?;
    ensure(
        s.query_fact("identity.legal_name", &["works_on"]).unwrap() == [Value::text("personal agents")],
        || "fact query".into(),
    )?;
    s.unmount(1).map_err(|e| e.to_string())?;
    ensure(s.node("research.focus") == Err(PodError::SessionClosed), || {
        "query after unmount succeeded".into()
    })?;
    ensure(s.query_semantic("paper", 1) == Err(PodError::SessionClosed), || {
        "semantic query after unmount".into()
    })?;
    ensure(
        pod.mount("wrong", &o, 2).err() == Some(PodError::Authentication),
        || "wrong passphrase mounted".into(),
    )?;

    let tiny = build_profile_graph(&[Attribute::new("user.x", "user", Value::Int(1))], &[], &o, 0).unwrap();
    let bytes = create_pod(&tiny, &[], PASS, &mut rng).unwrap().into_bytes();
    let workers = std::thread::available_parallelism().map_or(4, |n| n.get());
    let mounted: Vec<usize> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let (bytes, o) = (&bytes, &o);
                scope.spawn(move || {
                    (w..bytes.len())
                        .step_by(workers)
                        .filter(|&i| {
                            let mut b = bytes.clone();
                            b[i] ^= 0x01;
                            SealedPod::from_bytes(b)
                                .and_then(|p| p.mount(PASS, o, 0).map(|_| ()))
                                .is_ok()
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
    });
    ensure(mounted.is_empty(), || {
        format!("flipped bytes {mounted:?} still mounted")
    })?;

    const WORDS: [&str; 16] = [
        "paper",
        "review",
        "climbing",
        "film",
        "budget",
        "portfolio",
        "agent",
        "privacy",
        "coffee",
        "train",
        "deadline",
        "camera",
        "memory",
        "coast",
        "draft",
        "audit",
    ];
    let corpus: Vec<LogEntry> = (0..1000)
        .map(|i| {
            let text: Vec<&str> = (0..rng.gen_range(3..8))
                .map(|_| *WORDS.choose(&mut rng).unwrap())
                .collect();
            LogEntry::new(text.join(" "), i, vec![])
        })
        .collect();
    let s = create_pod(&g, &corpus, PASS, &mut rng)
        .unwrap()
        .mount(PASS, &o, 0)
        .unwrap();
    for _ in 0..20 {
        let query: Vec<&str> = (0..rng.gen_range(1..4))
            .map(|_| *WORDS.choose(&mut rng).unwrap())
            .collect();
        let query = query.join(" ");
        let q = embed(&query);
        let mut scored: Vec<(f64, u64)> = corpus
            .iter()
            .map(|l| (q.cosine(&embed(&l.text)), l.timestamp))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)));
        for k in [1, 5, 25] {
            let got: Vec<u64> = s
                .query_semantic(&query, k)
                .unwrap()
                .iter()
                .map(|l| l.timestamp)
                .collect();
            let want: Vec<u64> = scored.iter().take(k).map(|x| x.1).collect();
            ensure(got == want, || format!("top-{k} for `{query}` differs"))?;
        }
    }
    Ok(format!(
        "{} byte flips rejected, top-k matches brute force on 1000 entries",
        bytes.len()
    ))
}

fn determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_gatectl");
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let files = ["trace.jsonl", "audit.log", "report.txt", "report.csv", "report.json"];
    for rq in ["1", "2", "3"] {
        let dirs = [
            tmp.path().join(format!("rq{rq}-a")),
            tmp.path().join(format!("rq{rq}-b")),
        ];
        for d in &dirs {
            let st = Command::new(bin)
                .args(["sim", "--rq", rq, "--seed", "42", "--out"])
                .arg(d)
                .output()
                .map_err(|e| e.to_string())?;
            ensure(st.status.success(), || {
                format!("rq{rq}: {}", String::from_utf8_lossy(&st.stderr))
            })?;
        }
        for f in files {
            let read = |d: &Path| std::fs::read(d.join(f)).map_err(|e| format!("{f}: {e}"));
            ensure(read(&dirs[0])? == read(&dirs[1])?, || format!("rq{rq} {f} differs"))?;
        }
    }
    Ok("3 experiments x 5 files byte-identical".into())
}

fn audit() -> Outcome {
    let mut log = AuditLog::default();
    for i in 0..100u64 {
        log.append(
            1_700_000_000 + i,
            &format!("agent-{}", i % 7),
            "zone=Auto outcome=none",
            &[format!("f.x{i}")],
        );
    }
    let text = log.to_text();
    ensure(verify_audit_log(&text) == AuditVerdict::Valid, || {
        "fresh chain invalid".into()
    })?;
    let bytes = text.as_bytes();
    let mut line = 0;
    for i in 0..bytes.len() {
        let mut b = bytes.to_vec();
        b[i] ^= 0x01;
        let tampered = String::from_utf8_lossy(&b);
        let want = AuditVerdict::FirstBad(line.min(99));
        let got = verify_audit_log(&tampered);
        ensure(got == want, || format!("byte {i}: {got:?}, expected {want:?}"))?;
        if bytes[i] == b'\n' {
            line += 1;
        }
    }
    Ok(format!("{} single-byte tampers located", bytes.len()))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("RQ3 sweep reproduction", rq3),
        ("RQ2 migration reproduction", rq2),
        ("RQ1 reproduction", rq1),
        ("Routing property suite", routing),
        ("Protocol robustness", protocol),
        ("Pod integrity suite", pod_integrity),
        ("Determinism", determinism),
        ("Audit", audit),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.1} s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why} [{secs:.1} s]");
            }
        }
    }
    println!(
        "{}/{} acceptance criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
