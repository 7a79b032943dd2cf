use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use provnr_core::evidence::Keyring;
use provnr_core::notary::NotaryKind;
use provnr_core::sim::{ProvenanceClient, Scenario, ScenarioKind};
use provnr_core::service::CallContext;
use provnr_server::bench::Deployment;

fn provnr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_provnr")).args(args).output().unwrap()
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

/// Keys from `provnr keygen`, a deployment using them, and one token
/// issued to `patient-cli`.
fn issued(dir: &Path) -> (Deployment, std::path::PathBuf) {
    let keys = dir.join("keys");
    let o = provnr(&["keygen", "--out", p(&keys)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().count(), 3);
    let keyring = Keyring::load(&keys, "provnr-tsa").unwrap();
    let d = Deployment::start_in(NotaryKind::File, &dir.join("deploy"), keyring).unwrap();
    let ctx = CallContext::new("cli-tests", "patient-cli");
    let reply = d.provenance.new_document(&ctx, None).unwrap();
    let token = dir.join("token.json");
    fs::write(&token, reply.token.unwrap().to_bytes()).unwrap();
    (d, token)
}

#[test]
fn verify_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (d, token) = issued(dir.path());
    let anchors = dir.path().join("keys/anchors.json");
    let url = d.notary_url();

    let ok = provnr(&["verify", "--token", p(&token), "--patient", "patient-cli", "--notary", &url, "--trust", p(&anchors)]);
    assert_eq!(code(&ok), 0, "{}", stdout(&ok));
    assert_eq!(stdout(&ok).matches("  PASS").count(), 8, "{}", stdout(&ok));

    let other = provnr(&["verify", "--token", p(&token), "--patient", "mallory", "--notary", &url, "--trust", p(&anchors)]);
    assert_eq!(code(&other), 1);
    assert!(stdout(&other).contains("must not follow the recommendation"));

    let garbage = dir.path().join("garbage.json");
    fs::write(&garbage, b"{\"header\":").unwrap();
    let bad = provnr(&["verify", "--token", p(&garbage), "--patient", "patient-cli", "--notary", &url, "--trust", p(&anchors)]);
    assert_eq!(code(&bad), 2);

    let revoked = dir.path().join("revoked.txt");
    let token_key = Keyring::load(&dir.path().join("keys"), "provnr-tsa").unwrap().certificates()[0].fingerprint();
    fs::write(&revoked, format!("{token_key}\n")).unwrap();
    let r = provnr(&[
        "verify", "--token", p(&token), "--patient", "patient-cli", "--notary", &url, "--trust", p(&anchors), "--revoked", p(&revoked),
    ]);
    assert_eq!(code(&r), 1, "{}", stdout(&r));
}

#[test]
fn verify_against_an_absent_notary_fails_the_record_check() {
    let dir = tempfile::tempdir().unwrap();
    let (d, token) = issued(dir.path());
    drop(d);
    let anchors = dir.path().join("keys/anchors.json");
    let o = provnr(&["verify", "--token", p(&token), "--patient", "patient-cli", "--notary", "http://127.0.0.1:9", "--trust", p(&anchors)]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("FAIL (d)"), "{}", stdout(&o));
}

#[test]
fn reconstruct_matches_the_live_document() {
    let dir = tempfile::tempdir().unwrap();
    let d = Deployment::start(NotaryKind::Object).unwrap();
    let c = CallContext::new("cli-tests", "patient-r");
    let template = Scenario::default_for(ScenarioKind::Chatbot).template();
    let tid = d.provenance.new_template(&c, &template).unwrap().result;
    let doc = d.provenance.new_document(&c, None).unwrap().result;
    d.provenance.register_template(&c, &doc, &tid).unwrap();
    let history = dir.path().join("history.json");
    fs::write(&history, d.provenance.history(&doc).unwrap()).unwrap();
    let out = dir.path().join("doc.json");
    let data = d.root().join("service");
    let o = provnr(&["reconstruct", "--history", p(&history), "--data", p(&data), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read_to_string(&out).unwrap(), d.provenance.document(&doc).unwrap());

    let first = dir.path().join("first.json");
    let o = provnr(&["reconstruct", "--history", p(&history), "--data", p(&data), "--out", p(&first), "--from", "1", "--to", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(fs::read_to_string(&first).unwrap().contains("\"elements\":[]"));

    let h = provnr(&["hash", "document", p(&out)]);
    assert_eq!(stdout(&h).trim().len(), 64);
}

#[test]
fn bench_run_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("stats.csv");
    let o = provnr(&["bench", "run", "--scenario", "sensor", "--notary", "file", "--notary", "object", "--n", "20", "--out", p(&csv), "--verify"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = provnr(&["bench", "report", p(&csv)]);
    assert_eq!(code(&report), 0);
    let text = stdout(&report);
    assert!(text.contains("file") && text.contains("object") && text.contains("sensor"), "{text}");
    assert_eq!(code(&provnr(&["bench", "report", p(&dir.path().join("missing.csv"))])), 2);
}
