#![allow(dead_code)]

use egsl_core::fixed::Fixed;
use egsl_core::ledger::LedgerMode;
use egsl_core::net::NetworkConfig;
use egsl_core::scenario::{
    Action, DeviceSpec, EnergySection, HealthSection, IdentitySpec, Meta, Script, ScriptEvent, ThermostatSection,
};
use egsl_core::state::Role;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MINUTE: u64 = 60_000;
pub const HOUR: u64 = 3_600_000;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn fixed(rng: &mut impl Rng, max_raw: i64) -> Fixed {
    Fixed::from_raw(rng.random_range(0..=max_raw))
}

fn ident(name: String, role: Role, district: Option<&str>) -> IdentitySpec {
    IdentitySpec { name, role, district: district.map(str::to_owned) }
}

/// A mixed energy/health/data script with colliding times, duplicate and
/// out-of-order device samples, and consent traffic.
pub fn random_script(seed: u64) -> Script {
    let mut r = rng(seed);
    let prosumers: Vec<String> = (0..r.random_range(1..=4)).map(|i| format!("p{i}")).collect();
    let patients: Vec<String> = (0..r.random_range(1..=2)).map(|i| format!("pat{i}")).collect();
    let doctors: Vec<String> = (0..r.random_range(1..=2)).map(|i| format!("doc{i}")).collect();
    let mut identities = Vec::new();
    for p in &prosumers {
        let d = ["D1", "D2"][r.random_range(0..2)];
        identities.push(ident(p.clone(), Role::Prosumer, Some(d)));
    }
    identities.extend(patients.iter().map(|p| ident(p.clone(), Role::Patient, None)));
    identities.extend(doctors.iter().map(|d| ident(d.clone(), Role::Doctor, None)));
    let meters: Vec<DeviceSpec> =
        prosumers.iter().map(|p| DeviceSpec { id: format!("m-{p}"), owner: p.clone() }).collect();
    let wearables: Vec<DeviceSpec> =
        patients.iter().map(|p| DeviceSpec { id: format!("w-{p}"), owner: p.clone() }).collect();

    let everyone: Vec<&String> = prosumers.iter().chain(&patients).chain(&doctors).collect();
    let n_events = r.random_range(10..=40);
    let mut events = Vec::with_capacity(n_events);
    for _ in 0..n_events {
        // a coarse grid makes equal timestamps (same batch) common
        let at = r.random_range(1..=60) * 30 * MINUTE;
        let action = match r.random_range(0..10) {
            0..=2 => Action::MeterReading {
                device: meters.choose(&mut r).unwrap().id.clone(),
                consumed_kwh: fixed(&mut r, 20_000),
                produced_kwh: fixed(&mut r, 60_000),
                temp_c: Fixed::from_raw(r.random_range(100_000..300_000)),
            },
            3 => Action::Vitals {
                device: wearables.choose(&mut r).unwrap().id.clone(),
                heart_rate_bpm: Some(r.random_range(50..120)),
                systolic_mm_hg: r.random_bool(0.5).then(|| r.random_range(100..150)),
                diastolic_mm_hg: None,
            },
            4 => Action::AccessRequest {
                doctor: doctors.choose(&mut r).unwrap().clone(),
                patient: patients.choose(&mut r).unwrap().clone(),
                purpose: "care".into(),
            },
            5 => Action::AccessDecision {
                patient: patients.choose(&mut r).unwrap().clone(),
                doctor: doctors.choose(&mut r).unwrap().clone(),
                decision: ["approve", "deny"][r.random_range(0..2)].into(),
            },
            6 => Action::HealthRead {
                doctor: doctors.choose(&mut r).unwrap().clone(),
                patient: patients.choose(&mut r).unwrap().clone(),
            },
            7 => {
                let actor = (*everyone.choose(&mut r).unwrap()).clone();
                Action::DataWrite {
                    key: format!("data/{actor}/k{}", r.random_range(0..3)),
                    actor,
                    value: format!("v{}", r.random_range(0..1000)),
                }
            }
            8 => {
                let owner = everyone.choose(&mut r).unwrap();
                Action::DataRead {
                    actor: (*everyone.choose(&mut r).unwrap()).clone(),
                    key: format!("data/{owner}/k{}", r.random_range(0..3)),
                }
            }
            _ => Action::ThermostatSample {
                actor: prosumers.choose(&mut r).unwrap().clone(),
                device: "t1".into(),
                temp_c: Fixed::from_int(r.random_range(15..29)),
                consumption_w: Fixed::from_int(r.random_range(20..31)),
            },
        };
        events.push(ScriptEvent { at, action });
    }
    events.sort_by_key(|e| e.at);
    Script {
        meta: Meta { name: format!("random-{seed}"), seed: Some(seed), epoch: String::new() },
        network: NetworkConfig {
            peer_count: 4,
            quorum_k: None,
            batch_size: r.random_range(1..=8),
            ledger_mode: if r.random_bool(0.5) { LedgerMode::Chain } else { LedgerMode::Dag },
            test_mode: false,
        },
        identities,
        energy: Some(EnergySection { devices: meters, ..EnergySection::default() }),
        health: Some(HealthSection { wearables }),
        thermostat: Some(ThermostatSection::default()),
        feeds: Vec::new(),
        events,
        expectations: Vec::new(),
    }
}

/// One patient with recorded vitals, three doctors, and a random sequence of
/// request/approve/deny/revoke/read events, each at its own time.
pub fn consent_script(seed: u64) -> Script {
    let mut r = rng(seed);
    let doctors = ["d1", "d2", "d3"];
    let mut identities = vec![ident("pat".into(), Role::Patient, None)];
    identities.extend(doctors.iter().map(|d| ident((*d).into(), Role::Doctor, None)));
    let mut events = vec![
        ScriptEvent { at: MINUTE, action: Action::Vitals { device: "w".into(), heart_rate_bpm: Some(70), systolic_mm_hg: None, diastolic_mm_hg: None } },
        ScriptEvent { at: 2 * MINUTE, action: Action::Vitals { device: "w".into(), heart_rate_bpm: Some(71), systolic_mm_hg: Some(118), diastolic_mm_hg: None } },
    ];
    let n = r.random_range(8..=20);
    for i in 0..n {
        let at = (3 + i as u64) * MINUTE;
        let doctor = (*doctors.choose(&mut r).unwrap()).to_owned();
        let patient = "pat".to_owned();
        let action = match r.random_range(0..6) {
            0 => Action::AccessRequest { doctor, patient, purpose: "care".into() },
            1 => Action::AccessDecision { patient, doctor, decision: "approve".into() },
            2 => Action::AccessDecision { patient, doctor, decision: "deny".into() },
            3 => Action::AccessRevoke { patient, doctor },
            _ => Action::HealthRead { doctor, patient },
        };
        events.push(ScriptEvent { at, action });
    }
    Script {
        meta: Meta { name: format!("consent-{seed}"), seed: Some(seed), epoch: String::new() },
        network: NetworkConfig { peer_count: 1, quorum_k: Some(1), ..NetworkConfig::default() },
        identities,
        health: Some(HealthSection { wearables: vec![DeviceSpec { id: "w".into(), owner: "pat".into() }] }),
        events,
        ..Script::default()
    }
}
