"""Smoke test for the egsl Python bindings.

Build and install first:  pip install --no-build-isolation ./crates/py
Then run:                 python python/smoke_test.py
"""

import json
import pathlib
import sys
import tempfile

import egsl

ROOT = pathlib.Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "crates" / "core" / "scenarios"


def check(cond, what):
    if not cond:
        raise AssertionError(what)
    print(f"ok   {what}")


def main():
    check(
        egsl.sha256_hex(b"abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad",
        "sha256 test vector",
    )

    key = egsl.KeyPair.derive(7, "identity/alice")
    sig = key.sign(b"hello")
    check(len(sig) == 64 and key.verify(b"hello", sig), "ed25519 sign/verify")
    check(not key.verify(b"hullo", sig), "signature rejects other message")
    check(key.id == egsl.KeyPair.derive(7, "identity/alice").id, "key derivation is reproducible")

    check(egsl.dispatch("15.5") == ("1.5000", "0.1500"), "dispatch of 15.5 kWh")
    check(egsl.dispatch("15") is None, "no dispatch at the trigger")

    check(egsl.thermostat("17", "24") == ("turnOnAC", None), "cold room under threshold")
    action, text = egsl.thermostat("26", "26")
    check(action == "sendPrompt" and text.endswith("heating_unit?"), "hot room over threshold prompts")
    check(egsl.thermostat("26", "26", "NO") == ("doNothing", None), "declined prompt")
    try:
        egsl.thermostat("21", "20", "YES")
        check(False, "answer without prompt is refused")
    except egsl.EgslError:
        check(True, "answer without prompt is refused")

    total, central, trade = egsl.aggregate(["1.5", "2.25", "0.0001"], seed=3)
    check(total == "3.7501", "push-sum district total")
    check(central == "2.6251" and trade == "1.1250", "central/trade split")

    values, peaks = egsl.forecast(["1", "2", "4"], horizon=2, peak_k=2)
    check(values == ["2.3333", "2.3333"] and peaks == [2, 1], "short-history forecast")

    with tempfile.TemporaryDirectory() as out:
        run = egsl.run_scenario(str(SCENARIOS / "energy-day.scn"), out_dir=out)
        check(run.passed, "energy-day scenario passes its checks")
        report = json.loads(run.report_json())
        check(report["dispatchOrders"][0]["surplusKWh"] == "1.5000", "report carries the dispatch order")
        ledger = (pathlib.Path(out) / "ledger.egsl").read_bytes()
        check(ledger == run.ledger_bytes(), "written ledger matches the run")
        code, _ = egsl.verify_ledger(ledger)
        check(code == 0, "ledger verifies")
        tampered = bytearray(ledger)
        tampered[900] ^= 0xFF
        code, text = egsl.verify_ledger(bytes(tampered))
        check(code == 1 and "first bad block" in text, "tampering is detected")

    again = egsl.run_scenario(str(SCENARIOS / "energy-day.scn"))
    check(again.final_state_root == run.final_state_root, "reruns are deterministic")
    try:
        egsl.run_scenario(str(SCENARIOS / "energy-day.scn"), seed_override=1)
        check(False, "pinned seed cannot be overridden")
    except egsl.EgslError:
        check(True, "pinned seed cannot be overridden")

    net = egsl.Network(seed=5, ledger_mode="dag")
    check(net.configure("tariff", '{"value": "0.12"}', 1) == (True, None), "configure endorsed")
    check(net.drain() == 1 and net.height == 2, "block cut")
    check(set(net.peer_roots()) == {net.state_root}, "peers agree")
    check(egsl.verify_ledger(net.ledger_bytes())[0] == 0, "network ledger verifies")

    print("smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
