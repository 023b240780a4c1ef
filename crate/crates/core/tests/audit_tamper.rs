use soda_core::gatekeeper::{verify_audit_chain, verify_audit_log, AuditLog, AuditRecord, AuditVerdict};

fn chain(n: usize) -> AuditLog {
    let mut log = AuditLog::default();
    for i in 0..n {
        let fields = vec![format!("research.f{}", i % 7), "identity.contact".to_string()];
        let decision = [
            "zone=Auto outcome=granted",
            "zone=Negotiate outcome=blocked",
            "zone=Block outcome=blocked",
        ][i % 3];
        log.append(1_700_000_000 + i as u64, &format!("agent-{}", i % 5), decision, &fields);
    }
    log
}

#[test]
fn every_single_byte_tamper_is_located() {
    let log = chain(100);
    let text = log.to_text();
    assert_eq!(verify_audit_log(&text), AuditVerdict::Valid);
    let mut line_of = Vec::with_capacity(text.len());
    let mut line = 0;
    for b in text.bytes() {
        line_of.push(line);
        if b == b'\n' {
            line += 1;
        }
    }
    let bytes = text.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        // Flipping the low bit keeps ASCII text valid UTF-8.
        {
            let flipped = b ^ 0x01;
            let mut t = bytes.to_vec();
            t[i] = flipped;
            let t = String::from_utf8(t).unwrap();
            // A newline is the terminator of its own record.
            let want = line_of[i].min(99);
            assert_eq!(
                verify_audit_log(&t),
                AuditVerdict::FirstBad(want),
                "byte {i} {:?} -> {:?}",
                b as char,
                flipped as char
            );
        }
    }
}

#[test]
fn record_level_edits_are_located() {
    let records: Vec<AuditRecord> = chain(100).records().to_vec();
    assert_eq!(verify_audit_chain(&records), AuditVerdict::Valid);
    for i in [0, 1, 50, 99] {
        let mut r = records.clone();
        r[i].timestamp += 1;
        assert_eq!(verify_audit_chain(&r), AuditVerdict::FirstBad(i));
        let mut r = records.clone();
        r.remove(i);
        assert_eq!(
            verify_audit_chain(&r),
            if i == 99 {
                AuditVerdict::Valid
            } else {
                AuditVerdict::FirstBad(i)
            }
        );
    }
    assert_eq!(verify_audit_chain(&[]), AuditVerdict::Valid);
    assert_eq!(verify_audit_log(""), AuditVerdict::Valid);
}
