use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Command, Output, Stdio};

const BIN: &str = env!("CARGO_BIN_EXE_gatectl");
const PASS: &str = "integration passphrase";

fn gatectl(args: &[&str], pass: Option<&str>) -> Output {
    let mut c = Command::new(BIN);
    c.args(args)
        .env_remove("SODA_PASSPHRASE")
        .env_remove("SODA_NEW_PASSPHRASE");
    if let Some(p) = pass {
        c.env("SODA_PASSPHRASE", p);
    }
    c.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn create_then_inspect_shows_counts_only() {
    let dir = tempfile::tempdir().unwrap();
    let pod = dir.path().join("persona.pod");
    let o = gatectl(&["pod", "create", "--out", p(&pod), "--fixture", "persona"], Some(PASS));
    assert_eq!(code(&o), 0, "{o:?}");
    let o = gatectl(&["pod", "inspect", p(&pod)], Some(PASS));
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.contains("nodes 5"), "{text}");
    assert!(!text.contains("Mira") && !text.contains('='), "{text}");
    let revealed = stdout(&gatectl(&["pod", "inspect", p(&pod), "--reveal"], Some(PASS)));
    assert!(revealed.contains("Mira Solberg"), "{revealed}");
}

#[test]
fn bad_passphrase_and_corrupt_files_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let pod = dir.path().join("p.pod");
    assert_eq!(
        code(&gatectl(
            &["pod", "create", "--out", p(&pod), "--fixture", "benchmark"],
            Some(PASS)
        )),
        0
    );
    assert_eq!(code(&gatectl(&["pod", "inspect", p(&pod)], Some("not it"))), 2);

    let mut bytes = std::fs::read(&pod).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0xff;
    let flipped = dir.path().join("flipped.pod");
    std::fs::write(&flipped, &bytes).unwrap();
    assert_eq!(code(&gatectl(&["pod", "inspect", p(&flipped)], Some(PASS))), 2);

    let junk = dir.path().join("junk.pod");
    std::fs::write(&junk, b"not a pod").unwrap();
    assert_eq!(code(&gatectl(&["pod", "inspect", p(&junk)], Some(PASS))), 3);
    assert_eq!(
        code(&gatectl(
            &["pod", "inspect", p(&dir.path().join("missing"))],
            Some(PASS)
        )),
        3
    );
}

#[test]
fn migrate_and_export_import_preserve_counts() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (
        dir.path().join("a.pod"),
        dir.path().join("b.pod"),
        dir.path().join("c.pod"),
    );
    let bundle = dir.path().join("bundle.json");
    assert_eq!(
        code(&gatectl(
            &["pod", "create", "--out", p(&a), "--fixture", "persona"],
            Some(PASS)
        )),
        0
    );
    let counts = stdout(&gatectl(&["pod", "inspect", p(&a)], Some(PASS)));

    let mut m = Command::new(BIN);
    m.args(["pod", "migrate", p(&a), "--out", p(&b)])
        .env("SODA_PASSPHRASE", PASS)
        .env("SODA_NEW_PASSPHRASE", "rotated");
    assert!(m.output().unwrap().status.success());
    assert_eq!(code(&gatectl(&["pod", "inspect", p(&b)], Some(PASS))), 2);
    assert_eq!(stdout(&gatectl(&["pod", "inspect", p(&b)], Some("rotated"))), counts);

    assert_eq!(
        code(&gatectl(&["pod", "export", p(&a), "--out", p(&bundle)], Some(PASS))),
        0
    );
    assert_eq!(
        code(&gatectl(&["pod", "import", p(&bundle), "--out", p(&c)], Some(PASS))),
        0
    );
    assert_eq!(stdout(&gatectl(&["pod", "inspect", p(&c)], Some(PASS))), counts);
    std::fs::write(&bundle, "{\"v\": 1}").unwrap();
    assert_eq!(
        code(&gatectl(&["pod", "import", p(&bundle), "--out", p(&c)], Some(PASS))),
        3
    );
}

#[test]
fn profile_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let profile = dir.path().join("profile.json");
    std::fs::write(
        &profile,
        r#"{"attributes": [{"field_path": "research.focus", "ontology_class": "research.focus", "value": "agents"}],
            "relations": [], "logs": [{"text": "read a paper", "timestamp": 3, "tags": []}]}"#,
    )
    .unwrap();
    let pod = dir.path().join("f.pod");
    let o = gatectl(&["pod", "create", "--out", p(&pod), "--from", p(&profile)], Some(PASS));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        stdout(&gatectl(&["pod", "inspect", p(&pod)], Some(PASS))),
        "nodes 1\nedges 0\nlogs 1\n"
    );
}

#[test]
fn sim_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rq2");
    let o = gatectl(&["sim", "--rq", "2", "--seed", "42", "--out", p(&out)], None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["trace.jsonl", "audit.log", "report.txt", "report.csv", "report.json"] {
        assert!(out.join(f).metadata().unwrap().len() > 0, "{f}");
    }
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["rq2"]["rows"].as_array().unwrap().len(), 2);
    assert_eq!(code(&gatectl(&["verify-audit", p(&out.join("audit.log"))], None)), 0);

    let rq1 = dir.path().join("rq1");
    assert_eq!(code(&gatectl(&["sim", "--rq", "1", "--out", p(&rq1)], None)), 0);
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(rq1.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["rq1"]["rows"].as_array().unwrap().len(), 16);
    assert_eq!(json["rq1"]["aggregate"].as_array().unwrap().len(), 4);
}

#[test]
fn sim_config_and_repro_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[scenario]\nper_cell = 0\n").unwrap();
    assert_eq!(
        code(&gatectl(
            &["sim", "--rq", "3", "--out", p(&out), "--config", p(&bad)],
            None
        )),
        4
    );
    std::fs::write(&bad, "not toml [").unwrap();
    assert_eq!(
        code(&gatectl(
            &["sim", "--rq", "3", "--out", p(&out), "--config", p(&bad)],
            None
        )),
        4
    );
    // The live adapter needs a [live] table.
    assert_eq!(
        code(&gatectl(
            &["sim", "--rq", "1", "--out", p(&out), "--adapter", "live-endpoint"],
            None
        )),
        4
    );

    let live = dir.path().join("live.toml");
    std::fs::write(&live, "[live]\nurl = \"http://127.0.0.1:9/v1\"\nmodel = \"m\"\n").unwrap();
    let args = [
        "sim",
        "--rq",
        "1",
        "--out",
        p(&out),
        "--config",
        p(&live),
        "--adapter",
        "live-endpoint",
        "--strict-repro",
    ];
    assert_eq!(code(&gatectl(&args, None)), 5);
    assert_eq!(code(&gatectl(&args[..args.len() - 1], None)), 6);
    assert_eq!(
        code(&gatectl(
            &["sim", "--rq", "2", "--out", p(&out), "--strict-repro"],
            None
        )),
        0
    );
}

#[test]
fn verify_audit_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rq3");
    assert_eq!(code(&gatectl(&["sim", "--rq", "3", "--out", p(&out)], None)), 0);
    let log = out.join("audit.log");
    assert_eq!(code(&gatectl(&["verify-audit", p(&log)], None)), 0);

    let text = std::fs::read_to_string(&log).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let mut tampered: Vec<String> = lines.iter().map(|l| l.to_string()).collect();
    tampered[17] = lines[17].replacen("agent", "agenT", 1);
    assert_ne!(tampered[17], lines[17]);
    let bad = dir.path().join("bad.log");
    std::fs::write(&bad, tampered.join("\n") + "\n").unwrap();
    let o = gatectl(&["verify-audit", p(&bad)], None);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("index 17"));

    let empty = dir.path().join("empty.log");
    std::fs::write(&empty, "").unwrap();
    assert_eq!(code(&gatectl(&["verify-audit", p(&empty)], None)), 0);
    assert_eq!(
        code(&gatectl(&["verify-audit", p(&dir.path().join("nope.log"))], None)),
        3
    );
}

#[test]
fn serve_reports_pod_failures() {
    let dir = tempfile::tempdir().unwrap();
    let pod = dir.path().join("s.pod");
    assert_eq!(
        code(&gatectl(
            &["pod", "create", "--out", p(&pod), "--fixture", "benchmark"],
            Some(PASS)
        )),
        0
    );
    assert_eq!(
        code(&gatectl(&["serve", "--port", "0", "--pod", p(&pod)], Some("wrong"))),
        2
    );
    assert_eq!(
        code(&gatectl(
            &["serve", "--port", "0", "--pod", p(&dir.path().join("x"))],
            Some(PASS)
        )),
        3
    );
}

#[test]
fn serve_answers_on_the_announced_port() {
    let dir = tempfile::tempdir().unwrap();
    let pod = dir.path().join("s.pod");
    assert_eq!(
        code(&gatectl(
            &["pod", "create", "--out", p(&pod), "--fixture", "benchmark"],
            Some(PASS)
        )),
        0
    );
    let mut child = Command::new(BIN)
        .args(["serve", "--port", "0", "--pod", p(&pod)])
        .env("SODA_PASSPHRASE", PASS)
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let base = line.trim().strip_prefix("listening on ").unwrap().to_string();
    let body: serde_json::Value = ureq::get(format!("{base}/api/policy"))
        .call()
        .unwrap()
        .body_mut()
        .read_json()
        .unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert_eq!(body["v"], 1);
    assert_eq!(body["policy"]["strictness"], 5);
}
