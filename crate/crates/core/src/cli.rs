//! Command implementations behind the `egsl` binary. Each returns the text
//! to print and the process exit code: 0 pass, 1 check or integrity failure,
//! 2 structural error.

use std::fmt::Write as _;
use std::path::Path;

use crate::codec::Value;
use crate::crypto::{Hash, IdentityId};
use crate::engine::Engine;
use crate::forecast::{Forecaster, SeasonalNaive};
use crate::energy;
use crate::ledger::{self, KeyRegistry, LedgerFile, LedgerMode, RawLedger};
use crate::net::builtin_contracts;
use crate::scenario::{self, RunOptions, Script, ScenarioError};
use crate::state::{ConsentRecord, Identity, WorldState, NS_CONSENT, NS_IDENTITY};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_STRUCTURE: i32 = 2;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl Output {
    fn ok(stdout: String) -> Output {
        Output { code: EXIT_OK, stdout, stderr: String::new() }
    }

    fn fail(code: i32, stdout: String, stderr: impl Into<String>) -> Output {
        Output { code, stdout, stderr: stderr.into() }
    }
}

/// `run`: executes a script and writes `ledger.egsl` plus `report.json`.
pub fn run(script_path: &Path, out_dir: &Path, seed_override: Option<u64>, ledger_mode: Option<LedgerMode>) -> Output {
    let script = match Script::load(script_path) {
        Ok(s) => s,
        Err(e) => return Output::fail(EXIT_STRUCTURE, String::new(), format!("{}: {e}\n", script_path.display())),
    };
    let opts = RunOptions { seed_override, ledger_mode, test_mode: false };
    let outcome = match scenario::run_to_dir(&script, &opts, out_dir) {
        Ok(o) => o,
        Err(e @ (ScenarioError::Invalid(_) | ScenarioError::Parse(_) | ScenarioError::SeedPinned(_) | ScenarioError::Feed(_))) => {
            return Output::fail(EXIT_STRUCTURE, String::new(), format!("{e}\n"))
        }
        Err(e) => return Output::fail(EXIT_FAIL, String::new(), format!("{e}\n")),
    };
    let r = &outcome.report;
    let mut out = String::new();
    let _ = writeln!(out, "scenario {} (seed {}, {} mode)", r.name, r.seed, mode_name(r.ledger_mode));
    let _ = writeln!(out, "blocks {}  transactions {}  final root {}", r.blocks, r.transactions, r.final_state_root);
    let _ = writeln!(
        out,
        "integrity: ledger {}  replay {}  peers {}",
        pass(r.integrity.ledger_valid),
        pass(r.integrity.replay_matches),
        pass(r.integrity.peers_agree)
    );
    if let Some(h) = &r.halted {
        let _ = writeln!(out, "HALTED: peer {} diverged at height {:?}", h.peer, h.height);
    }
    for d in &r.dispatch_orders {
        let _ = writeln!(
            out,
            "dispatch {} day {}: surplus {} kWh, payment {}",
            d.prosumer_name, d.order.day, d.order.surplus_kwh, d.order.payment
        );
    }
    for a in &r.district_aggregates {
        let _ = writeln!(
            out,
            "district {} day {}: total {} kWh (central {}, trade {}) over {} members",
            a.district_id, a.day, a.total_surplus_kwh, a.to_central_kwh, a.to_trade_kwh, a.members
        );
    }
    for c in &r.checks {
        let _ = writeln!(out, "check {} {}: expected {} got {}", pass(c.pass), c.check, c.expected, c.actual);
    }
    let _ = writeln!(out, "wrote {}", out_dir.display());
    if r.passed() {
        Output::ok(out)
    } else {
        Output::fail(EXIT_FAIL, out, "run failed its checks or integrity\n")
    }
}

fn pass(b: bool) -> &'static str {
    if b {
        "PASS"
    } else {
        "FAIL"
    }
}

fn mode_name(m: LedgerMode) -> &'static str {
    match m {
        LedgerMode::Chain => "chain",
        LedgerMode::Dag => "dag",
    }
}

/// `verify`: per-block link, signature and sequence checks, then a replay
/// that must reproduce every recorded state root.
pub fn verify(ledger_path: &Path) -> Output {
    match std::fs::read(ledger_path) {
        Ok(bytes) => verify_bytes(&bytes),
        Err(e) => Output::fail(EXIT_STRUCTURE, String::new(), format!("{}: {e}\n", ledger_path.display())),
    }
}

/// [`verify`] over an in-memory ledger image.
pub fn verify_bytes(bytes: &[u8]) -> Output {
    let raw = match RawLedger::split(bytes) {
        Ok(r) => r,
        Err(e) => return Output::fail(EXIT_STRUCTURE, String::new(), format!("structural error: {e}\n")),
    };
    let report = ledger::verify_raw(&raw, &KeyRegistry::from_blocks(raw.blocks()));
    let mut out = String::new();
    for b in &report.blocks {
        let _ = writeln!(
            out,
            "block {:>4} height {:>4} {}  link {}  signature {}  seq {}{}",
            b.index,
            b.height,
            b.block_hash,
            pass(b.hash_link_ok),
            pass(b.signature_ok),
            pass(b.seq_ok),
            if b.problems.is_empty() { String::new() } else { format!("  ({})", b.problems.join("; ")) }
        );
    }
    if let Some(bad) = report.first_invalid() {
        return Output::fail(
            EXIT_FAIL,
            out,
            format!("INVALID: first bad block is index {} (height {})\n", bad.index, bad.height),
        );
    }
    let ledger = match LedgerFile::parse(bytes) {
        Ok(l) => l,
        Err(e) => return Output::fail(EXIT_FAIL, out, format!("INVALID: {e}\n")),
    };
    let replayed = Engine::for_ledger(builtin_contracts(), &ledger).and_then(|engine| engine.replay_from_genesis(&ledger));
    match replayed {
        Ok(root) => {
            let _ = writeln!(out, "valid: {} blocks, replay reproduces every state root; final root {root}", ledger.len());
            Output::ok(out)
        }
        Err(e) => Output::fail(EXIT_FAIL, out, format!("INVALID: {e}\n")),
    }
}

pub enum InspectQuery {
    Prefix(String),
    Tx(String),
    /// Consent records whose subject is this identity (name or hex id).
    Consent(String),
}

struct Loaded {
    ledger: LedgerFile,
    state: WorldState,
}

fn load_verified(ledger_path: &Path) -> Result<Loaded, Output> {
    let checked = verify(ledger_path);
    if checked.code != EXIT_OK {
        return Err(Output::fail(checked.code, String::new(), checked.stderr));
    }
    let bytes = std::fs::read(ledger_path).map_err(|e| Output::fail(EXIT_STRUCTURE, String::new(), format!("{e}\n")))?;
    let ledger = LedgerFile::parse(&bytes).map_err(|e| Output::fail(EXIT_FAIL, String::new(), format!("{e}\n")))?;
    let state = Engine::for_ledger(builtin_contracts(), &ledger)
        .and_then(|engine| engine.replay_state(&ledger))
        .map_err(|e| Output::fail(EXIT_FAIL, String::new(), format!("{e}\n")))?;
    Ok(Loaded { ledger, state })
}

/// Resolves a registered identity by label or hex id.
pub fn resolve_identity(state: &WorldState, who: &str) -> Option<IdentityId> {
    if let Ok(id) = who.parse::<IdentityId>() {
        return Some(id);
    }
    state
        .scan_prefix(NS_IDENTITY)
        .filter_map(|(_, e)| Identity::decode(&e.value).ok())
        .find(|i| i.label == who)
        .map(|i| i.id)
}

fn render(bytes: &[u8]) -> String {
    match Value::decode(bytes) {
        Ok(v) => v.to_json().to_string(),
        Err(_) => format!("0x{}", hex::encode(bytes)),
    }
}

/// `inspect`: permission-checked listing, as the authority unless `as_who` is given.
pub fn inspect(ledger_path: &Path, query: &InspectQuery, as_who: Option<&str>) -> Output {
    let Loaded { ledger, state } = match load_verified(ledger_path) {
        Ok(l) => l,
        Err(o) => return o,
    };
    let caller = match as_who {
        None => state.authority(),
        Some(w) => match resolve_identity(&state, w) {
            Some(id) => id,
            None => return Output::fail(EXIT_STRUCTURE, String::new(), format!("unknown identity `{w}`\n")),
        },
    };
    let mut out = String::new();
    match query {
        InspectQuery::Prefix(prefix) => {
            let entries: Vec<_> = state.scan_prefix(prefix).collect();
            if let Some((key, _)) = entries.iter().find(|(k, _)| !state.may_read(k, &caller).unwrap_or(false)) {
                return Output::fail(EXIT_FAIL, String::new(), format!("permission denied: {caller} may not read `{key}`\n"));
            }
            for (key, e) in entries {
                let _ = writeln!(out, "{key}  v{}  {}", e.version, render(&e.value));
            }
            if out.is_empty() {
                let _ = writeln!(out, "no keys under `{prefix}`");
            }
        }
        InspectQuery::Tx(id) => {
            let Ok(id) = id.parse::<Hash>() else {
                return Output::fail(EXIT_STRUCTURE, String::new(), format!("`{id}` is not a transaction id\n"));
            };
            let Some(tx) = ledger.transactions().find(|t| t.tx_id == id) else {
                return Output::fail(EXIT_FAIL, String::new(), format!("no transaction {id}\n"));
            };
            if caller != state.authority() && caller != tx.invoker {
                return Output::fail(EXIT_FAIL, String::new(), format!("permission denied: {caller} may not read tx {id}\n"));
            }
            let mut json = tx.to_value().to_json();
            if let (Some(obj), Ok(args)) = (json.as_object_mut(), tx.args_value()) {
                obj.insert("args".into(), args.to_json());
            }
            let _ = writeln!(out, "{}", serde_json::to_string_pretty(&json).expect("json"));
        }
        InspectQuery::Consent(subject) => {
            let Some(subject) = resolve_identity(&state, subject) else {
                return Output::fail(EXIT_STRUCTURE, String::new(), format!("unknown identity `{subject}`\n"));
            };
            let records: Vec<(String, ConsentRecord)> = state
                .scan_prefix(NS_CONSENT)
                .filter(|(k, _)| k.len() == NS_CONSENT.len() + 64)
                .filter_map(|(k, e)| ConsentRecord::decode(&e.value).ok().map(|r| (k.clone(), r)))
                .filter(|(_, r)| r.subject == subject)
                .collect();
            let visible = |r: &ConsentRecord| caller == state.authority() || caller == r.subject || caller == r.requester;
            if records.iter().any(|(_, r)| !visible(r)) {
                return Output::fail(EXIT_FAIL, String::new(), format!("permission denied: {caller} may not list consents of {subject}\n"));
            }
            for (_, r) in &records {
                let _ = writeln!(out, "{}", r.to_value().to_json());
            }
            if records.is_empty() {
                let _ = writeln!(out, "no consent records for {subject}");
            }
        }
    }
    Output::ok(out)
}

/// `forecast`: hourly consumption forecast over the meter readings in a ledger.
pub fn forecast(ledger_path: &Path, prosumer: Option<&str>, horizon: usize, peak_k: usize, as_who: Option<&str>) -> Output {
    let Loaded { state, .. } = match load_verified(ledger_path) {
        Ok(l) => l,
        Err(o) => return o,
    };
    let resolve = |w: &str| resolve_identity(&state, w).ok_or_else(|| format!("unknown identity `{w}`\n"));
    let caller = match as_who.map(resolve).transpose() {
        Ok(c) => c.unwrap_or_else(|| state.authority()),
        Err(e) => return Output::fail(EXIT_STRUCTURE, String::new(), e),
    };
    let prosumer = match prosumer.map(resolve).transpose() {
        Ok(p) => p,
        Err(e) => return Output::fail(EXIT_STRUCTURE, String::new(), e),
    };
    let prefix = prosumer.map_or_else(|| "energy/".to_owned(), |p| format!("energy/{}/", p.to_hex()));
    let all = scenario::readings_in(&state, &state.authority(), prosumer.as_ref());
    let readable = scenario::readings_in(&state, &caller, prosumer.as_ref());
    if readable.len() != all.len() {
        return Output::fail(EXIT_FAIL, String::new(), format!("permission denied: {caller} may not read readings under `{prefix}`\n"));
    }
    let history = energy::hourly_series(&readable);
    match (SeasonalNaive { peak_k }).forecast(&history, horizon) {
        Ok(f) => {
            let json = serde_json::json!({
                "historyHours": history.len(),
                "method": f.method,
                "peakHours": f.peak_hours,
                "values": f.values,
            });
            Output::ok(format!("{}\n", serde_json::to_string_pretty(&json).expect("json")))
        }
        Err(e) => Output::fail(EXIT_FAIL, String::new(), format!("{e}\n")),
    }
}
