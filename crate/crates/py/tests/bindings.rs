use pyo3::prelude::*;
use pyo3::types::PyDict;

fn with_module(code: &str) {
    Python::attach(|py| {
        let module = pyo3::wrap_pymodule!(egsl::egsl)(py);
        let globals = PyDict::new(py);
        globals.set_item("egsl", module).unwrap();
        globals.set_item("SCENARIOS", concat!(env!("CARGO_MANIFEST_DIR"), "/../core/scenarios")).unwrap();
        let code = std::ffi::CString::new(code).unwrap();
        py.run(&code, Some(&globals), None).unwrap_or_else(|e| panic!("{e}"));
    });
}

#[test]
fn building_blocks() {
    with_module(
        r#"
assert egsl.dispatch("15.5") == ("1.5000", "0.1500")
assert egsl.dispatch("15") is None
assert egsl.thermostat("17", "25")[0] == "sendPrompt"
assert egsl.thermostat("17", "25", "YES") == ("turnOnAC", None)
assert egsl.forecast(["1", "3"], horizon=1, peak_k=1) == (["2.0000"], [1])
k = egsl.KeyPair.derive(1, "x")
assert k.verify(b"m", k.sign(b"m"))
"#,
    );
}

#[test]
fn scenario_and_network() {
    with_module(
        r#"
run = egsl.run_scenario(SCENARIOS + "/health-consent.scn")
assert run.passed
code, _ = egsl.verify_ledger(run.ledger_bytes())
assert code == 0
assert egsl.verify_ledger(b"nope")[0] == 2
try:
    egsl.run_scenario_json('{"meta": {"name": "x"}, "bogus": 1}')
    raise SystemExit("accepted an unknown field")
except egsl.EgslError:
    pass
net = egsl.Network(peer_count=4, quorum_k=3)
assert net.configure("a", "1", 1) == (True, None)
assert net.configure("a", "1", 1) == (False, "duplicateRequest")
net.drain()
assert len(set(net.peer_roots())) == 1
"#,
    );
}
