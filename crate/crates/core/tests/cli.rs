use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use egsl_core::crypto::KeyPair;
use egsl_core::health::health_prefix;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn egsl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_egsl")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn run_into(script: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", script.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    egsl(&args)
}

#[test]
fn bundled_scenarios_pass_and_rerun_identically() {
    for name in ["energy-day.scn", "health-consent.scn", "gov-services.scn"] {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        let first = run_into(&scenario(name), &a, &[]);
        assert_eq!(code(&first), 0, "{name}: {}", String::from_utf8_lossy(&first.stdout));
        assert_eq!(code(&run_into(&scenario(name), &b, &[])), 0);
        for file in ["report.json", "ledger.egsl"] {
            let (x, y) = (std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap());
            assert!(x == y, "{name}: {file} differs between runs");
        }
        let ledger = a.join("ledger.egsl");
        assert_eq!(code(&egsl(&["verify", ledger.to_str().unwrap()])), 0, "{name}");
    }
}

#[test]
fn energy_report_contents() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run_into(&scenario("energy-day.scn"), dir.path(), &[])), 0);
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["dispatchOrders"][0]["prosumerName"], "p1");
    assert_eq!(report["dispatchOrders"][0]["surplusKWh"], "1.5000");
    assert_eq!(report["dispatchOrders"][0]["payment"], "0.1500");
    assert_eq!(report["integrity"]["peersAgree"], true);
    assert!(report["checks"].as_array().unwrap().iter().all(|c| c["pass"] == true));
}

#[test]
fn verify_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run_into(&scenario("energy-day.scn"), dir.path(), &[])), 0);
    let path = dir.path().join("ledger.egsl");
    let pristine = std::fs::read(&path).unwrap();

    let mut flipped = pristine.clone();
    flipped[900] ^= 0xff;
    let bad = dir.path().join("flipped.egsl");
    std::fs::write(&bad, &flipped).unwrap();
    let o = egsl(&["verify", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("first bad block is index 0"));

    let cut = dir.path().join("cut.egsl");
    std::fs::write(&cut, &pristine[..pristine.len() - 10]).unwrap();
    assert_eq!(code(&egsl(&["verify", cut.to_str().unwrap()])), 2);

    assert_eq!(code(&egsl(&["verify", dir.path().join("missing").to_str().unwrap()])), 2);
}

#[test]
fn inspect_is_permission_checked() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run_into(&scenario("health-consent.scn"), dir.path(), &[])), 0);
    let ledger = dir.path().join("ledger.egsl");
    let ledger = ledger.to_str().unwrap();
    let alice = KeyPair::derive(7, "identity/alice").id();
    let prefix = health_prefix(&alice);

    let own = egsl(&["inspect", ledger, "--prefix", &prefix, "--as", "alice"]);
    assert_eq!(code(&own), 0);
    assert!(String::from_utf8_lossy(&own.stdout).contains(&prefix));
    assert_eq!(code(&egsl(&["inspect", ledger, "--prefix", &prefix])), 0, "authority reads everything");
    assert_eq!(code(&egsl(&["inspect", ledger, "--prefix", &prefix, "--as", "dr-carol"])), 1);
    assert_eq!(code(&egsl(&["inspect", ledger, "--consent", "alice", "--as", "dr-carol"])), 1);
    assert_eq!(code(&egsl(&["inspect", ledger, "--consent", "alice", "--as", "alice"])), 0);
    assert_eq!(code(&egsl(&["inspect", ledger, "--prefix", &prefix, "--as", "nobody"])), 2);
}

#[test]
fn forecast_reads_own_or_authorized_meters() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run_into(&scenario("energy-day.scn"), dir.path(), &[])), 0);
    let ledger = dir.path().join("ledger.egsl");
    let ledger = ledger.to_str().unwrap();
    let o = egsl(&["forecast", ledger, "--prosumer", "p1", "--horizon", "4"]);
    assert_eq!(code(&o), 0);
    let json: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(json["values"].as_array().unwrap().len(), 4);
    assert_eq!(json["peakHours"].as_array().unwrap().len(), 3);
    assert_eq!(code(&egsl(&["forecast", ledger, "--prosumer", "p1", "--as", "p1"])), 0);
    assert_eq!(code(&egsl(&["forecast", ledger, "--prosumer", "p1", "--as", "p2"])), 1);
}

#[test]
fn structural_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let pinned = run_into(&scenario("energy-day.scn"), dir.path(), &["--seed-override", "5"]);
    assert_eq!(code(&pinned), 2, "a pinned seed may not be overridden");
    let broken = dir.path().join("broken.scn");
    std::fs::write(&broken, r#"{"meta": {"name": "x"}, "unknownSection": 1}"#).unwrap();
    assert_eq!(code(&run_into(&broken, &dir.path().join("o"), &[])), 2);
    assert_eq!(code(&run_into(&dir.path().join("absent.scn"), &dir.path().join("o"), &[])), 2);
}

#[test]
fn failed_expectation_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let mut script: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(scenario("energy-day.scn")).unwrap()).unwrap();
    script["expectations"] = serde_json::json!([{ "check": "/dispatchOrders/0/payment", "expected": "9.9999" }]);
    let path = dir.path().join("wrong.scn");
    std::fs::write(&path, script.to_string()).unwrap();
    let o = run_into(&path, &dir.path().join("o"), &[]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stdout).contains("check FAIL /dispatchOrders/0/payment"));
}

#[test]
fn ledger_mode_override() {
    let dir = tempfile::tempdir().unwrap();
    let (chain, dag) = (dir.path().join("chain"), dir.path().join("dag"));
    assert_eq!(code(&run_into(&scenario("health-consent.scn"), &chain, &["--ledger-mode", "chain"])), 0);
    assert_eq!(code(&run_into(&scenario("health-consent.scn"), &dag, &["--ledger-mode", "dag"])), 0);
    let root = |d: &Path| {
        let r: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("report.json")).unwrap()).unwrap();
        (r["ledgerMode"].clone(), r["finalStateRoot"].clone())
    };
    let (c, d) = (root(&chain), root(&dag));
    assert_eq!(c.0, "chain");
    assert_eq!(d.0, "dag");
    assert_eq!(c.1, d.1);
}
