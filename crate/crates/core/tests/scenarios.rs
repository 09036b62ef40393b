mod common;

use std::path::Path;

use common::{random_script, MINUTE};
use egsl_core::crypto::KeyPair;
use egsl_core::ledger::TxOutcome;
use egsl_core::net::NetworkConfig;
use egsl_core::scenario::{self, Action, IdentitySpec, Meta, RunOptions, ScenarioError, Script, ScriptEvent};
use egsl_core::state::Role;

fn bundled(name: &str) -> Script {
    Script::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)).unwrap()
}

fn write(actor: &str, key: &str, value: &str, at: u64) -> ScriptEvent {
    ScriptEvent { at, action: Action::DataWrite { actor: actor.into(), key: key.into(), value: value.into() } }
}

fn citizens(names: &[&str]) -> Vec<IdentitySpec> {
    names.iter().map(|n| IdentitySpec { name: (*n).into(), role: Role::Prosumer, district: None }).collect()
}

fn script(name: &str, identities: Vec<IdentitySpec>, events: Vec<ScriptEvent>) -> Script {
    Script {
        meta: Meta { name: name.into(), seed: None, epoch: String::new() },
        identities,
        events,
        ..Script::default()
    }
}

#[test]
fn same_time_writes_to_one_key_conflict() {
    // both execute against the same block start; the second commit is stale
    let s = script(
        "conflict",
        citizens(&["a"]),
        vec![write("a", "data/a/x", "1", MINUTE), write("a", "data/a/x", "2", MINUTE)],
    );
    let out = scenario::run(&s, &RunOptions::default()).unwrap();
    assert_eq!(out.report.outcomes.aborted, 1);
    assert!(out.report.integrity.ok());
}

#[test]
fn later_writes_see_earlier_ones() {
    let s = script(
        "sequential",
        citizens(&["a"]),
        vec![write("a", "data/a/x", "1", MINUTE), write("a", "data/a/x", "2", 2 * MINUTE)],
    );
    let out = scenario::run(&s, &RunOptions::default()).unwrap();
    assert_eq!(out.report.outcomes.aborted, 0);
    assert_eq!(out.network.state().version("data/a/x"), 2);
}

#[test]
fn foreign_reads_are_refused_and_recorded() {
    let s = script(
        "acl",
        citizens(&["a", "b"]),
        vec![
            write("a", "data/a/x", "secret", MINUTE),
            ScriptEvent { at: 2 * MINUTE, action: Action::DataRead { actor: "b".into(), key: "data/a/x".into() } },
            ScriptEvent {
                at: 3 * MINUTE,
                action: Action::DataGrant {
                    actor: "a".into(),
                    key: "data/a/x".into(),
                    grantee: "b".into(),
                    read: true,
                    write: false,
                },
            },
            ScriptEvent { at: 4 * MINUTE, action: Action::DataRead { actor: "b".into(), key: "data/a/x".into() } },
        ],
    );
    let out = scenario::run(&s, &RunOptions::default()).unwrap();
    let reads: Vec<TxOutcome> = out
        .network
        .ledger()
        .transactions()
        .filter(|t| t.operation == "read")
        .map(|t| t.outcome.clone())
        .collect();
    assert_eq!(reads, vec![TxOutcome::Failed("permission".into()), TxOutcome::Success]);
    assert_eq!(out.report.failed_transactions.len(), 1);
    assert_eq!(out.report.failed_transactions[0].invoker, "b");
}

#[test]
fn seeds_resolve_and_keys_follow_them() {
    let s = script("seeds", citizens(&["a"]), vec![write("a", "data/a/x", "1", MINUTE)]);
    let zero = scenario::run(&s, &RunOptions::default()).unwrap();
    assert_eq!(zero.report.seed, 0);
    let opts = RunOptions { seed_override: Some(42), ..RunOptions::default() };
    let other = scenario::run(&s, &opts).unwrap();
    assert_eq!(other.report.seed, 42);
    assert_eq!(other.keys.id("a"), KeyPair::derive(42, "identity/a").id());
    assert_ne!(zero.report.final_state_root, other.report.final_state_root);

    let pinned = bundled("energy-day.scn");
    assert!(matches!(scenario::run(&pinned, &opts), Err(ScenarioError::SeedPinned(2024))));
}

#[test]
fn invalid_references_are_structural() {
    let s = script("bad", citizens(&["a"]), vec![write("ghost", "data/ghost/x", "1", MINUTE)]);
    assert!(matches!(s.validate(), Err(ScenarioError::Invalid(_))));
    let mut net = script("bad-net", citizens(&["a"]), Vec::new());
    net.network = NetworkConfig { peer_count: 4, quorum_k: Some(5), ..NetworkConfig::default() };
    assert!(matches!(net.validate(), Err(ScenarioError::Invalid(_))));
}

#[test]
fn scripts_round_trip_through_json() {
    for seed in 0..20 {
        let s = random_script(seed);
        let text = serde_json::to_string_pretty(&s).unwrap();
        assert_eq!(Script::parse(&text).unwrap(), s, "seed {seed}");
    }
    for name in ["energy-day.scn", "health-consent.scn", "gov-services.scn"] {
        let s = bundled(name);
        assert_eq!(Script::parse(&serde_json::to_string(&s).unwrap()).unwrap(), s);
    }
}

#[test]
fn health_audit_lists_every_attempt() {
    let out = scenario::run(&bundled("health-consent.scn"), &RunOptions::default()).unwrap();
    let summary = &out.report.audit_summaries[0];
    assert_eq!(summary.patient, "alice");
    let lines: Vec<(&str, &str, &str)> =
        summary.entries.iter().map(|e| (e.actor.as_str(), e.action.as_str(), e.outcome.as_str())).collect();
    assert_eq!(lines[0], ("dr-bob", "read", "error:permission"));
    assert!(lines.contains(&("dr-bob", "read", "ok")));
    assert!(lines.contains(&("dr-carol", "read", "error:permission")));
    assert!(lines.contains(&("alice", "revoke", "ok")));
    assert_eq!(*lines.last().unwrap(), ("dr-bob", "read", "error:permission"));
}

#[test]
fn gov_services_checks_pass() {
    let out = scenario::run(&bundled("gov-services.scn"), &RunOptions::default()).unwrap();
    assert!(out.report.passed(), "{}", out.report.to_json());
    assert_eq!(out.report.outcomes.failed, 2);
}

#[test]
fn reports_are_reproducible() {
    for seed in [3, 17, 29] {
        let s = random_script(seed);
        let a = scenario::run(&s, &RunOptions::default()).unwrap().report.to_json();
        let b = scenario::run(&s, &RunOptions::default()).unwrap().report.to_json();
        assert_eq!(a, b);
    }
}
