//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use common::{consent_script, fixed, random_script, rng, HOUR};
use egsl_core::cli;
use egsl_core::codec::Value;
use egsl_core::crypto::{Hash, KeyPair};
use egsl_core::energy::EnergyConfig;
use egsl_core::engine::Engine;
use egsl_core::fixed::Fixed;
use egsl_core::forecast::{Forecaster, SeasonalNaive, HOURS_PER_WEEK};
use egsl_core::gov::{thermostat_step, Answer, ThermostatAction, ThermostatConfig, ThermostatError};
use egsl_core::health;
use egsl_core::ledger::{linearize, Block, LedgerFile, LedgerMode, TxOutcome, TxRequest};
use egsl_core::net::{
    builtin_contracts, Network, NetworkConfig, RejectReason, Replica, Submission, WALL_CLOCK,
};
use egsl_core::policy;
use egsl_core::scenario::{
    self, Action, DeviceSpec, EnergySection, IdentitySpec, Meta, RunOptions, Script, ScriptEvent,
};
use egsl_core::state::{Role, WorldState};
use egsl_core::swarm;
use rand::Rng;

type Verdict = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fx(s: &str) -> Fixed {
    s.parse().expect("fixed literal")
}

// ---------------------------------------------------------------- 1

#[derive(Debug, PartialEq)]
enum Expected {
    TurnOn(&'static str),
    Prompt(&'static str),
    Nothing,
    Protocol,
}

const AC_PROMPT: &str =
    "The daily electricity consumption threshold has been reached. Would you like to turn on the A/C?";
const HEATING_PROMPT: &str =
    "The daily electricity consumption threshold has been reached. Would you like to turn on the heating_unit?";

/// The printed rule, transcribed line by line. An answer is only meaningful
/// right after a prompt.
fn thermostat_oracle(temp: f64, consumption: f64, answer: Option<&str>) -> Expected {
    let branch = if temp < 18.0 {
        Some(("air_conditioner", AC_PROMPT))
    } else if temp > 25.0 {
        Some(("heating_unit", HEATING_PROMPT))
    } else {
        None
    };
    let Some((appliance, prompt)) = branch else {
        return if answer.is_some() { Expected::Protocol } else { Expected::Nothing };
    };
    if consumption < 25.0 {
        return if answer.is_some() { Expected::Protocol } else { Expected::TurnOn(appliance) };
    }
    match answer {
        None => Expected::Prompt(prompt),
        Some("YES") => Expected::TurnOn(appliance),
        Some(_) => Expected::Nothing,
    }
}

fn criterion_1() -> Verdict {
    let started = Instant::now();
    let cfg = ThermostatConfig::default();
    let mut cases = 0;
    for temp in ["17", "18", "21.5", "25", "26"] {
        for cons in ["24", "25", "26"] {
            for answer in [None, Some("YES"), Some("NO")] {
                cases += 1;
                let want = thermostat_oracle(temp.parse().unwrap(), cons.parse().unwrap(), answer);
                let parsed = answer.map(|a| a.parse::<Answer>().unwrap());
                let got = match thermostat_step(fx(temp), fx(cons), parsed, &cfg) {
                    Ok(ThermostatAction::TurnOnAc) => Expected::TurnOn("air_conditioner"),
                    Ok(ThermostatAction::TurnOnHeating) => Expected::TurnOn("heating_unit"),
                    Ok(ThermostatAction::SendPrompt(text)) if text == AC_PROMPT => Expected::Prompt(AC_PROMPT),
                    Ok(ThermostatAction::SendPrompt(text)) if text == HEATING_PROMPT => {
                        Expected::Prompt(HEATING_PROMPT)
                    }
                    Ok(ThermostatAction::SendPrompt(text)) => return Err(format!("unexpected prompt {text:?}")),
                    Ok(ThermostatAction::DoNothing) => Expected::Nothing,
                    Err(ThermostatError::Protocol) => Expected::Protocol,
                    Err(e) => return Err(format!("temp {temp} cons {cons} answer {answer:?}: {e}")),
                };
                ensure(got == want, || format!("temp {temp} cons {cons} answer {answer:?}: {got:?} != {want:?}"))?;
            }
        }
    }
    let elapsed = started.elapsed();
    ensure(cases == 45, || format!("{cases} cases"))?;
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!("45/45 cases in {elapsed:?}"))
}

// ---------------------------------------------------------------- 2

fn single_prosumer(produced: &str) -> Script {
    Script {
        meta: Meta { name: format!("dispatch-{produced}"), seed: Some(1), epoch: String::new() },
        network: NetworkConfig::default(),
        identities: vec![IdentitySpec { name: "p1".into(), role: Role::Prosumer, district: Some("D1".into()) }],
        energy: Some(EnergySection {
            devices: vec![DeviceSpec { id: "m1".into(), owner: "p1".into() }],
            settle_days: true,
            ..EnergySection::default()
        }),
        events: vec![ScriptEvent {
            at: 12 * HOUR,
            action: Action::MeterReading {
                device: "m1".into(),
                consumed_kwh: fx("3"),
                produced_kwh: fx(produced),
                temp_c: fx("20"),
            },
        }],
        ..Script::default()
    }
}

fn criterion_2() -> Verdict {
    let cfg = EnergyConfig::default();
    ensure(cfg.daily_need_kwh == fx("14") && cfg.tariff == fx("0.10"), || "unexpected defaults".into())?;
    let out = scenario::run(&single_prosumer("15.5"), &RunOptions::default()).map_err(|e| e.to_string())?;
    let orders = &out.report.dispatch_orders;
    ensure(orders.len() == 1, || format!("15.5 kWh gave {} orders", orders.len()))?;
    let o = &orders[0].order;
    ensure(o.surplus_kwh == Fixed::from_raw(15_000), || format!("surplus {}", o.surplus_kwh))?;
    ensure(o.payment == Fixed::from_raw(1_500), || format!("payment {}", o.payment))?;
    ensure(o.tariff == Fixed::from_raw(1_000), || format!("tariff {}", o.tariff))?;
    let json: serde_json::Value = serde_json::from_str(&out.report.to_json()).unwrap();
    ensure(json.pointer("/dispatchOrders/0/surplusKWh") == Some(&"1.5000".into()), || "report surplus".into())?;
    ensure(json.pointer("/dispatchOrders/0/payment") == Some(&"0.1500".into()), || "report payment".into())?;
    for produced in ["15", "14"] {
        let out = scenario::run(&single_prosumer(produced), &RunOptions::default()).map_err(|e| e.to_string())?;
        let n = out.report.dispatch_orders.len();
        ensure(n == 0, || format!("{produced} kWh gave {n} orders"))?;
    }
    Ok("15.5 kWh -> 1.5000 kWh / 0.1500; 15 and 14 kWh -> none".into())
}

// ---------------------------------------------------------------- 3

fn check_replication(seed: u64) -> Result<usize, String> {
    let script = random_script(seed);
    let out = scenario::run(&script, &RunOptions::default()).map_err(|e| format!("seed {seed}: {e}"))?;
    let report = &out.report;
    ensure(report.halted.is_none(), || format!("seed {seed}: halted {:?}", report.halted))?;
    ensure(report.integrity.ok(), || format!("seed {seed}: integrity {:?}", report.integrity))?;
    let peer_roots: BTreeSet<Hash> = out.network.peers().iter().map(|p| p.replica.root()).collect();
    ensure(peer_roots.len() == 1, || format!("seed {seed}: peers disagree"))?;

    // independent: parse the bytes, rebuild four replicas block by block
    let ledger = LedgerFile::parse(out.network.ledger().to_bytes()).map_err(|e| format!("seed {seed}: {e}"))?;
    let engine = Engine::for_ledger(builtin_contracts(), &ledger).map_err(|e| format!("seed {seed}: {e}"))?;
    let mut replicas: Vec<Replica> = (0..4).map(|_| Replica::new(&engine, ledger.mode())).collect();
    for block in ledger.blocks() {
        let mut fulls = BTreeSet::new();
        for r in &mut replicas {
            let root = r.apply(&engine, block).map_err(|e| format!("seed {seed}: {e}"))?;
            ensure(root == block.state_root, || format!("seed {seed}: height {} root differs", block.height))?;
            fulls.insert(r.root());
        }
        ensure(fulls.len() == 1, || format!("seed {seed}: replicas split at height {}", block.height))?;
    }
    let replayed = engine.replay_from_genesis(&ledger).map_err(|e| format!("seed {seed}: {e}"))?;
    ensure(replayed == report.final_state_root, || format!("seed {seed}: replay root differs"))?;
    ensure(replicas[0].root() == replayed, || format!("seed {seed}: replica root differs"))?;
    Ok(ledger.len())
}

fn criterion_3() -> Verdict {
    let started = Instant::now();
    let mut blocks = 0;
    for seed in 0..100 {
        blocks += check_replication(seed)?;
    }
    let elapsed = started.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(format!("100 scripts, {blocks} blocks, 0 divergences in {elapsed:?}"))
}

// ---------------------------------------------------------------- 4

fn small_network() -> Network {
    let cfg = NetworkConfig { peer_count: 1, quorum_k: Some(1), ..NetworkConfig::default() };
    Network::new(cfg, KeyPair::derive(1, "authority"), LedgerFile::new(LedgerMode::Chain)).unwrap()
}

/// The pinned ledger: genesis only (a block with its signature, state root
/// and the signed bootstrap transaction), which fits in 2 KB.
fn pinned_ledger() -> Vec<u8> {
    small_network().ledger().to_bytes().to_vec()
}

/// Genesis plus a block holding a refused read, to cover the parent link.
fn two_block_ledger() -> Vec<u8> {
    let mut net = small_network();
    let args = Value::map().with("key", "data/x").build();
    let req = TxRequest::new(net.authority(), policy::DATA, "read", &args, 1).unwrap();
    assert!(net.submit(req).unwrap().is_accepted());
    net.cut_block().unwrap();
    net.ledger().to_bytes().to_vec()
}

fn flips(bytes: &[u8]) -> impl Iterator<Item = (usize, Vec<u8>)> + '_ {
    (0..bytes.len()).map(|i| {
        let mut mutant = bytes.to_vec();
        mutant[i] ^= 0xff;
        (i, mutant)
    })
}

fn criterion_4() -> Verdict {
    let bytes = pinned_ledger();
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/pinned.egsl");
    if std::env::var_os("EGSL_WRITE_FIXTURES").is_some() {
        std::fs::write(&fixture, &bytes).map_err(|e| e.to_string())?;
    }
    let pinned = std::fs::read(&fixture).map_err(|e| format!("{}: {e}", fixture.display()))?;
    ensure(pinned == bytes, || "ledger construction is no longer byte-identical to the fixture".into())?;
    ensure(pinned.len() <= 2048, || format!("fixture is {} bytes", pinned.len()))?;
    ensure(cli::verify_bytes(&pinned).code == cli::EXIT_OK, || "pristine ledger fails verify".into())?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("mutant.egsl");
    let mut undetected = Vec::new();
    for (i, mutant) in flips(&pinned) {
        let in_process = cli::verify_bytes(&mutant).code;
        std::fs::write(&path, &mutant).map_err(|e| e.to_string())?;
        let status = Command::new(env!("CARGO_BIN_EXE_egsl"))
            .arg("verify")
            .arg(&path)
            .output()
            .map_err(|e| e.to_string())?
            .status;
        if in_process == cli::EXIT_OK || status.success() {
            undetected.push(i);
        }
    }
    ensure(undetected.is_empty(), || format!("undetected offsets {undetected:?}"))?;

    let longer = two_block_ledger();
    ensure(cli::verify_bytes(&longer).code == cli::EXIT_OK, || "pristine two-block ledger fails verify".into())?;
    let missed: Vec<usize> =
        flips(&longer).filter(|(_, m)| cli::verify_bytes(m).code == cli::EXIT_OK).map(|(i, _)| i).collect();
    ensure(missed.is_empty(), || format!("two-block ledger: undetected offsets {missed:?}"))?;
    Ok(format!(
        "{0}/{0} flips of the pinned {0}-byte ledger detected (library and binary), {1}/{1} of a two-block ledger",
        pinned.len(),
        longer.len()
    ))
}

// ---------------------------------------------------------------- 5

fn consent_id_written(tx: &egsl_core::ledger::Transaction) -> Option<String> {
    tx.write_set.iter().find_map(|w| {
        let rest = w.key.strip_prefix("consent/")?;
        (rest.len() == 64 && rest.bytes().all(|b| b.is_ascii_hexdigit())).then(|| rest.to_owned())
    })
}

fn check_consent(seed: u64) -> Result<(usize, usize), String> {
    let out = scenario::run(&consent_script(seed), &RunOptions::default()).map_err(|e| format!("seed {seed}: {e}"))?;
    let ledger = out.network.ledger();
    let patient = out.keys.id("pat");
    let authority = out.keys.authority.id();
    let trail: BTreeSet<Hash> = health::audit_trail(ledger, &patient, &patient, &authority)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|e| e.tx_id)
        .collect();

    let mut txs: Vec<_> = ledger.transactions().collect();
    txs.sort_by_key(|t| t.seq_no);
    let mut requester_of: BTreeMap<String, _> = BTreeMap::new();
    let mut approved: BTreeMap<_, BTreeSet<String>> = BTreeMap::new();
    let (mut granted, mut denied) = (0, 0);
    for tx in txs {
        if tx.contract != health::HEALTH {
            continue;
        }
        let ok = tx.outcome == TxOutcome::Success;
        let args = tx.args_value().map_err(|e| e.to_string())?;
        let consent_arg = args.get("consentId").and_then(Value::as_bytes).map(hex::encode);
        match tx.operation.as_str() {
            "requestAccess" if ok => {
                let id = consent_id_written(tx).ok_or_else(|| format!("seed {seed}: request without record"))?;
                requester_of.insert(id, tx.invoker);
            }
            "decideAccess" if ok && tx.invoker == patient => {
                let id = consent_arg.ok_or("decision without consent id")?;
                let doctor = *requester_of.get(&id).ok_or("decision on unknown request")?;
                let approve = args.get("decision").and_then(Value::as_str) == Some("approve");
                let set = approved.entry(doctor).or_default();
                if approve {
                    set.insert(id);
                } else {
                    set.remove(&id);
                }
            }
            "revokeAccess" if ok && tx.invoker == patient => {
                let id = consent_arg.ok_or("revocation without consent id")?;
                if let Some(doctor) = requester_of.get(&id) {
                    approved.entry(*doctor).or_default().remove(&id);
                }
            }
            "read" if tx.invoker != patient => {
                let has = approved.get(&tx.invoker).is_some_and(|s| !s.is_empty());
                if ok {
                    granted += 1;
                    ensure(has, || format!("seed {seed}: read seq {} without active approval", tx.seq_no))?;
                } else {
                    denied += 1;
                    ensure(!has, || format!("seed {seed}: approved read seq {} refused", tx.seq_no))?;
                    ensure(trail.contains(&tx.tx_id), || {
                        format!("seed {seed}: denied read seq {} missing from audit trail", tx.seq_no)
                    })?;
                }
            }
            _ => {}
        }
    }
    Ok((granted, denied))
}

fn criterion_5() -> Verdict {
    let (mut granted, mut denied) = (0, 0);
    for seed in 0..1000 {
        let (g, d) = check_consent(seed)?;
        granted += g;
        denied += d;
    }
    ensure(granted > 0 && denied > 0, || format!("degenerate sample: {granted} granted, {denied} denied"))?;
    Ok(format!("1000 interleavings, {granted} granted and {denied} denied reads, 0 violations"))
}

// ---------------------------------------------------------------- 6

fn criterion_6() -> Verdict {
    let cfg = NetworkConfig { peer_count: 4, quorum_k: Some(3), test_mode: true, ..NetworkConfig::default() };
    let mut net = Network::new(cfg, KeyPair::derive(6, "authority"), LedgerFile::new(LedgerMode::Chain))
        .map_err(|e| e.to_string())?;
    for t in 1..=50u64 {
        let req = TxRequest::new(net.authority(), WALL_CLOCK, "stamp", &Value::Null, t).unwrap();
        match net.submit(req).map_err(|e| e.to_string())? {
            Submission::Rejected(RejectReason::Divergence { .. }) => {}
            other => return Err(format!("trial {t}: {other:?}")),
        }
    }
    ensure(net.pending() == 0 && net.ledger().len() == 1, || "a nondeterministic request got through".into())?;
    Ok("50/50 rejected by endorsement (k=3, N=4)".into())
}

// ---------------------------------------------------------------- 7

fn half_even_div(num: i128, den: i128) -> i128 {
    let (q, r) = (num.div_euclid(den), num.rem_euclid(den));
    match (2 * r).cmp(&den) {
        std::cmp::Ordering::Less => q,
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Equal => q + (q & 1),
    }
}

fn criterion_7() -> Verdict {
    let mut r = rng(7);
    let frac = EnergyConfig::default().central_fraction;
    let mut worst = 0f64;
    for instance in 0..200u64 {
        let n = r.random_range(1..=50);
        let values: Vec<Fixed> = (0..n).map(|_| Fixed::from_raw(r.random_range(1..=200_000))).collect();
        let exact: i128 = values.iter().map(|v| v.raw() as i128).sum();
        let target = exact as f64 / 10_000.0;
        let rounds = swarm::default_rounds(n);
        let (leader, run) = swarm::aggregate(&values, rounds, instance).map_err(|e| e.to_string())?.unwrap();
        for (agent, est) in run.estimates.iter().enumerate() {
            let est = est.ok_or_else(|| format!("instance {instance}: agent {agent} has no weight"))?;
            let rel = (est - target).abs() / target;
            worst = worst.max(rel);
            ensure(rel <= 1e-6, || format!("instance {instance} agent {agent}: relative error {rel:e}"))?;
        }
        ensure(leader.raw() as i128 == exact, || format!("instance {instance}: leader {leader} vs exact {exact}"))?;
        let split = swarm::split(leader, frac).map_err(|e| e.to_string())?;
        ensure(split.to_central + split.to_trade == split.total, || format!("instance {instance}: split leaks"))?;
        let central = half_even_div(exact * frac.raw() as i128, 10_000);
        ensure(split.to_central.raw() as i128 == central, || format!("instance {instance}: central share"))?;
    }
    Ok(format!("200 districts, worst relative error {worst:.2e}"))
}

// ---------------------------------------------------------------- 8

fn oracle_forecast(history: &[i64], horizon: usize) -> Vec<i64> {
    let mean = |keep: &dyn Fn(usize) -> bool| {
        let picked: Vec<i128> = (0..history.len()).filter(|&i| keep(i)).map(|i| history[i] as i128).collect();
        half_even_div(picked.iter().sum(), picked.len() as i128) as i64
    };
    if history.len() < HOURS_PER_WEEK {
        return vec![mean(&|_| true); horizon];
    }
    (0..horizon)
        .map(|h| {
            let slot = (history.len() + h) % HOURS_PER_WEEK;
            mean(&|i| i % HOURS_PER_WEEK == slot)
        })
        .collect()
}

fn oracle_peaks(history: &[i64], k: usize) -> Vec<u8> {
    let mut sum = [0i128; 24];
    let mut count = [0i128; 24];
    for (i, v) in history.iter().enumerate() {
        sum[i % 24] += *v as i128;
        count[i % 24] += 1;
    }
    let mut chosen = Vec::new();
    while chosen.len() < k {
        let mut best: Option<usize> = None;
        for h in 0..24 {
            if count[h] == 0 || chosen.contains(&(h as u8)) {
                continue;
            }
            if best.is_none_or(|b| sum[h] * count[b] > sum[b] * count[h]) {
                best = Some(h);
            }
        }
        match best {
            Some(h) => chosen.push(h as u8),
            None => break,
        }
    }
    chosen
}

fn criterion_8() -> Verdict {
    let mut r = rng(8);
    let palette = [0, 5_000, 12_345, 20_000, 33_333];
    for case in 0..50 {
        let len = r.random_range(1..=3 * HOURS_PER_WEEK);
        let ties = r.random_bool(0.5);
        let history: Vec<i64> = (0..len)
            .map(|_| if ties { palette[r.random_range(0..palette.len())] } else { fixed(&mut r, 80_000).raw() })
            .collect();
        let horizon = r.random_range(1..=48);
        let k = r.random_range(1..=6);
        let values: Vec<Fixed> = history.iter().map(|&v| Fixed::from_raw(v)).collect();
        let f = SeasonalNaive { peak_k: k }.forecast(&values, horizon).map_err(|e| e.to_string())?;
        let got: Vec<i64> = f.values.iter().map(|v| v.raw()).collect();
        ensure(got == oracle_forecast(&history, horizon), || format!("case {case}: values differ"))?;
        let want = oracle_peaks(&history, k);
        ensure(f.peak_hours == want, || format!("case {case}: peaks {:?} != {want:?}", f.peak_hours))?;
    }
    Ok("50/50 histories identical (values and peak hours)".into())
}

// ---------------------------------------------------------------- 9

fn all_topological_orders(blocks: &[Block]) -> Vec<Vec<usize>> {
    let index: BTreeMap<Hash, usize> = blocks.iter().enumerate().map(|(i, b)| (b.block_hash, i)).collect();
    let parents: Vec<Vec<usize>> =
        blocks.iter().map(|b| b.parent_hashes.iter().map(|p| index[p]).collect()).collect();
    fn extend(prefix: &mut Vec<usize>, parents: &[Vec<usize>], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == parents.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..parents.len() {
            if !prefix.contains(&i) && parents[i].iter().all(|p| prefix.contains(p)) {
                prefix.push(i);
                extend(prefix, parents, out);
                prefix.pop();
            }
        }
    }
    let mut out = Vec::new();
    extend(&mut Vec::new(), &parents, &mut out);
    out
}

fn apply_recorded(blocks: &[Block], order: &[usize], authority: &KeyPair) -> Hash {
    let mut state = WorldState::new(authority.id());
    for &i in order {
        for tx in &blocks[i].transactions {
            state.apply(&tx.write_set);
        }
    }
    state.root()
}

fn criterion_9() -> Verdict {
    let authority = KeyPair::derive(9, "authority");
    let cfg = NetworkConfig { ledger_mode: LedgerMode::Dag, ..NetworkConfig::default() };
    let mut net = Network::new(cfg, authority.clone(), LedgerFile::new(LedgerMode::Dag)).map_err(|e| e.to_string())?;
    let submit = |net: &mut Network, name: &str, t: u64| -> Result<(), String> {
        let args = Value::map().with("name", name).with("value", Value::Int(t as i64)).build();
        let req = TxRequest::new(&authority, policy::SYSTEM, "configure", &args, t).unwrap();
        ensure(net.submit(req).map_err(|e| e.to_string())?.is_accepted(), || format!("{name} rejected"))
    };
    submit(&mut net, "a", 1)?;
    net.cut_block().map_err(|e| e.to_string())?;
    submit(&mut net, "b", 2)?;
    submit(&mut net, "c", 2)?;
    net.cut_sibling_blocks().map_err(|e| e.to_string())?;
    submit(&mut net, "d", 3)?;
    net.cut_block().map_err(|e| e.to_string())?;

    let blocks = net.ledger().blocks();
    ensure(blocks.len() == 5, || format!("{} blocks", blocks.len()))?;
    let d = &blocks[4];
    ensure(d.parent_hashes.len() == 2, || "last block does not merge the siblings".into())?;
    ensure(blocks[2].parent_hashes == blocks[3].parent_hashes, || "B and C are not siblings".into())?;
    let peer_roots: BTreeSet<Hash> = net.peers().iter().map(|p| p.replica.root()).collect();
    ensure(peer_roots.len() == 1, || "peers disagree".into())?;
    let root = *peer_roots.iter().next().unwrap();
    ensure(root == d.state_root && root == net.state().root(), || "peer root differs from the merge block".into())?;

    let orders = all_topological_orders(blocks);
    ensure(orders.len() == 2, || format!("{} topological orders", orders.len()))?;
    let smallest = orders
        .iter()
        .min_by_key(|o| o.iter().map(|&i| blocks[i].block_hash).collect::<Vec<_>>())
        .unwrap();
    ensure(linearize(blocks).map_err(|e| e.to_string())? == *smallest, || "linearization is not minimal".into())?;
    for o in &orders {
        ensure(apply_recorded(blocks, o, &authority) == root, || format!("order {o:?} gives another root"))?;
    }
    let engine = Engine::for_ledger(builtin_contracts(), net.ledger()).map_err(|e| e.to_string())?;
    ensure(engine.replay_from_genesis(net.ledger()).map_err(|e| e.to_string())? == root, || "replay differs".into())?;

    let script = Script::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/energy-day.scn"))
        .map_err(|e| e.to_string())?;
    let mut pairs = vec![script];
    pairs.extend((0..10).map(random_script));
    for s in &pairs {
        let root_in = |mode| {
            let opts = RunOptions { ledger_mode: Some(mode), ..RunOptions::default() };
            scenario::run(s, &opts).map(|o| o.report.final_state_root).map_err(|e| e.to_string())
        };
        let (chain, dag) = (root_in(LedgerMode::Chain)?, root_in(LedgerMode::Dag)?);
        ensure(chain == dag, || format!("{}: chain and dag roots differ", s.meta.name))?;
    }
    Ok(format!("diamond root matches {} orders; {} scripts agree in chain and dag mode", orders.len(), pairs.len()))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 9] = [
        ("thermostat decision table", criterion_1),
        ("dispatch instance", criterion_2),
        ("determinism and replication", criterion_3),
        ("tamper detection", criterion_4),
        ("consent precedes access", criterion_5),
        ("nondeterminism rejection", criterion_6),
        ("swarm aggregation", criterion_7),
        ("forecast oracle equivalence", criterion_8),
        ("dag mode", criterion_9),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let label = format!("criterion {} {name}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| label.contains(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        match check() {
            Ok(detail) => println!("{label}: PASS ({detail}) [{:.2?}]", started.elapsed()),
            Err(why) => {
                failed += 1;
                println!("{label}: FAIL ({why}) [{:.2?}]", started.elapsed());
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
