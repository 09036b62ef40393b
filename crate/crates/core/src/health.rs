//! Patient vitals from wearables, the doctor access-request workflow, and
//! audit trails reconstructed from the ledger.

use serde::Serialize;

use crate::codec::{CodecError, Value};
use crate::crypto::{Hash, IdentityId, KeyPair, PublicKey, Signature};
use crate::energy::accept_device_sample;
use crate::engine::{args, Category, Contract, ContractError, ErrorCode, TxContext};
use crate::ledger::{LedgerFile, TxRequest};
use crate::policy::{self, open_request, transition};
use crate::state::{Acl, ConsentStatus, Role};

pub const HEALTH: &str = "health";

pub fn health_prefix(patient: &IdentityId) -> String {
    format!("health/{}/", patient.to_hex())
}

pub fn vitals_key(patient: &IdentityId, at: u64) -> String {
    format!("{}{at:013}", health_prefix(patient))
}

pub fn wearable_key(device: &str) -> String {
    format!("device/wearable/{device}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct VitalsReading {
    pub device_id: String,
    pub patient: IdentityId,
    pub at: u64,
    pub heart_rate_bpm: Option<i64>,
    pub systolic_mm_hg: Option<i64>,
    pub diastolic_mm_hg: Option<i64>,
}

impl VitalsReading {
    pub fn to_value(&self) -> Value {
        Value::map()
            .with("at", self.at as i64)
            .with("deviceId", self.device_id.as_str())
            .with("diastolicMmHg", self.diastolic_mm_hg)
            .with("heartRateBpm", self.heart_rate_bpm)
            .with("patient", self.patient)
            .with("systolicMmHg", self.systolic_mm_hg)
            .build()
    }

    pub fn from_value(v: &Value) -> Result<VitalsReading, ContractError> {
        let opt = |k: &str| -> Result<Option<i64>, ContractError> {
            args::opt(v, k).map(|_| args::int(v, k)).transpose()
        };
        Ok(VitalsReading {
            device_id: args::str(v, "deviceId")?.to_owned(),
            patient: args::id(v, "patient")?,
            at: args::uint(v, "at")?,
            heart_rate_bpm: opt("heartRateBpm")?,
            systolic_mm_hg: opt("systolicMmHg")?,
            diastolic_mm_hg: opt("diastolicMmHg")?,
        })
    }

    pub fn to_request(&self, patient: &KeyPair, device: &KeyPair, time: u64) -> Result<TxRequest, CodecError> {
        let body = self.to_value();
        let args = Value::map()
            .with("reading", body.clone())
            .with("signature", device.sign(&body.encode()?).to_value())
            .build();
        TxRequest::new(patient, HEALTH, "ingest", &args, time)
    }
}

fn register_wearable(ctx: &mut TxContext<'_>, a: &Value) -> Result<Value, ContractError> {
    ctx.require_role(Role::Authority)?;
    let device = args::str(a, "deviceId")?;
    if device.is_empty() || device.contains('/') {
        return Err(ContractError::args("`deviceId` must be non-empty and contain no `/`"));
    }
    let owner = args::id(a, "owner")?;
    match ctx.identity(&owner)? {
        Some(i) if i.role == Role::Patient => {}
        Some(i) => return Err(ContractError::new(ErrorCode::Validation, format!("wearables belong to patients, not {}", i.role))),
        None => return Err(ContractError::new(ErrorCode::NotFound, format!("patient {owner} not registered"))),
    }
    let record = Value::map()
        .with("deviceId", device)
        .with("lastAt", Value::Null)
        .with("owner", owner)
        .with("publicKey", PublicKey(args::array(a, "publicKey")?))
        .build();
    ctx.insert(&wearable_key(device), &record, owner, Acl::public())?;
    Ok(Value::Null)
}

fn ingest(ctx: &mut TxContext<'_>, a: &Value) -> Result<Value, ContractError> {
    let body = args::get(a, "reading")?;
    let reading = VitalsReading::from_value(body)?;
    if reading.heart_rate_bpm.is_none() && reading.systolic_mm_hg.is_none() && reading.diastolic_mm_hg.is_none() {
        return Err(ContractError::new(ErrorCode::Validation, "a vitals reading needs at least one vital"));
    }
    let signature = Signature::from_value(args::get(a, "signature")?)?;
    accept_device_sample(ctx, &wearable_key(&reading.device_id), reading.patient, reading.at, body, &signature)?;
    ctx.insert(&vitals_key(&reading.patient, reading.at), body, reading.patient, Acl::private())?;
    Ok(Value::Null)
}

fn request_access(ctx: &mut TxContext<'_>, a: &Value) -> Result<Value, ContractError> {
    ctx.require_role(Role::Doctor)?;
    let patient = args::id(a, "patient")?;
    match ctx.identity(&patient)? {
        Some(i) if i.role == Role::Patient => {}
        _ => return Err(ContractError::new(ErrorCode::NotFound, format!("patient {patient} not registered"))),
    }
    let record = open_request(ctx, patient, &health_prefix(&patient), args::str(a, "purpose")?)?;
    Ok(record.to_value())
}

fn decide_access(ctx: &mut TxContext<'_>, a: &Value) -> Result<Value, ContractError> {
    let next = match args::str(a, "decision")? {
        "approve" => ConsentStatus::Approved,
        "deny" => ConsentStatus::Denied,
        other => return Err(ContractError::args(format!("decision `{other}` is not approve|deny"))),
    };
    Ok(transition(ctx, &args::hash(a, "consentId")?, next)?.to_value())
}

fn revoke_access(ctx: &mut TxContext<'_>, a: &Value) -> Result<Value, ContractError> {
    Ok(transition(ctx, &args::hash(a, "consentId")?, ConsentStatus::Revoked)?.to_value())
}

/// Every vitals record of `patient`, permission-checked as a whole: a denied
/// read fails the transaction, which is still logged.
fn read_records(ctx: &mut TxContext<'_>, a: &Value) -> Result<Value, ContractError> {
    let patient = args::id(a, "patient")?;
    let mut out = Vec::new();
    for key in ctx.scan_keys(&health_prefix(&patient)) {
        out.push(ctx.read_value(&key)?.expect("listed key exists"));
    }
    Ok(Value::List(out))
}

pub fn health_contract() -> Contract {
    Contract::new(HEALTH, Category::Dynamic)
        .op("registerWearable", register_wearable)
        .op("ingest", ingest)
        .op("requestAccess", request_access)
        .op("decideAccess", decide_access)
        .op("revokeAccess", revoke_access)
        .op("read", read_records)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct AuditEntry {
    pub seq_no: u64,
    pub actor: IdentityId,
    pub action: String,
    pub outcome: String,
    pub logical_time: u64,
    pub tx_id: Hash,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum AuditError {
    #[error("{0} may not read the audit trail of {1}")]
    Permission(IdentityId, IdentityId),
}

/// The consent-record subject of a decision/revocation, from its recorded
/// write set or, for failed attempts, the consent id in its arguments.
fn consent_subject(ledger: &LedgerFile, consent_id: &Hash) -> Option<IdentityId> {
    ledger.transactions().find_map(|tx| {
        let key = crate::state::ConsentRecord::key(consent_id);
        tx.write_set.iter().find(|w| w.key == key).and_then(|w| {
            crate::state::ConsentRecord::decode(&w.value).ok().map(|r| r.subject)
        })
    })
}

/// Every request, decision, revocation and read (successful or denied) that
/// touches `patient`'s records, in ledger order. Derived from the ledger alone.
pub fn audit_trail(ledger: &LedgerFile, patient: &IdentityId, caller: &IdentityId, authority: &IdentityId) -> Result<Vec<AuditEntry>, AuditError> {
    if caller != patient && caller != authority {
        return Err(AuditError::Permission(*caller, *patient));
    }
    let prefix = health_prefix(patient);
    let mut txs: Vec<_> = ledger.transactions().collect();
    txs.sort_by_key(|t| t.seq_no);
    let mut out = Vec::new();
    for tx in txs {
        let Ok(args) = tx.args_value() else { continue };
        let arg_id = |k: &str| args::id(&args, k).ok();
        let arg_hash = |k: &str| args::hash(&args, k).ok();
        let action = match (tx.contract.as_str(), tx.operation.as_str()) {
            (HEALTH, "requestAccess") if arg_id("patient") == Some(*patient) => Some("request".to_owned()),
            (HEALTH, "read") if arg_id("patient") == Some(*patient) => Some("read".to_owned()),
            (HEALTH | policy::CONSENT, "decideAccess" | "decide" | "revokeAccess" | "revoke") => {
                arg_hash("consentId").filter(|id| consent_subject(ledger, id) == Some(*patient)).map(|_| {
                    match (tx.operation.as_str(), args::str(&args, "decision")) {
                        (_, Ok(d)) => d.to_owned(),
                        _ => "revoke".to_owned(),
                    }
                })
            }
            (policy::CONSENT, "request")
                if arg_id("subject") == Some(*patient)
                    && args::str(&args, "resourcePrefix").is_ok_and(|p| prefix.starts_with(p) || p.starts_with(&prefix)) =>
            {
                Some("request".to_owned())
            }
            (policy::DATA, "read") if args::str(&args, "key").is_ok_and(|k| k.starts_with(&prefix)) => {
                Some("read".to_owned())
            }
            _ => None,
        };
        if let Some(action) = action {
            out.push(AuditEntry {
                seq_no: tx.seq_no,
                actor: tx.invoker,
                action,
                outcome: tx.outcome.label(),
                logical_time: tx.logical_time,
                tx_id: tx.tx_id,
            });
        }
    }
    Ok(out)
}
