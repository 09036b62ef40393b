//! Versioned world state, access control, identities and consent records.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{CodecError, Fields, Value};
use crate::crypto::{Hash, IdentityId, PublicKey, Signature};

pub const NS_IDENTITY: &str = "id/";
pub const NS_CONSENT: &str = "consent/";
pub const NS_ORACLE: &str = "oracle/";
pub const NS_CONFIG: &str = "config/";

pub fn identity_key(id: &IdentityId) -> String {
    format!("{NS_IDENTITY}{}", id.to_hex())
}

/// Namespace of a key: everything before the first `/`.
pub fn namespace(key: &str) -> &str {
    key.split_once('/').map_or(key, |(ns, _)| ns)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AccessError {
    #[error("key `{0}` not found")]
    NotFound(String),
    #[error("{who:?} may not {action} `{key}`")]
    Permission { who: IdentityId, action: &'static str, key: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Perms {
    pub read: bool,
    pub write: bool,
}

impl Perms {
    pub const READ: Perms = Perms { read: true, write: false };
    pub const READ_WRITE: Perms = Perms { read: true, write: true };
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Acl {
    /// World-readable (identity records, diplomas).
    pub public_read: bool,
    pub grants: BTreeMap<IdentityId, Perms>,
}

impl Acl {
    pub fn private() -> Acl {
        Acl::default()
    }

    pub fn public() -> Acl {
        Acl { public_read: true, grants: BTreeMap::new() }
    }

    pub fn with(mut self, who: IdentityId, perms: Perms) -> Acl {
        self.grants.insert(who, perms);
        self
    }

    pub fn grants_read(&self, who: &IdentityId) -> bool {
        self.public_read || self.grants.get(who).is_some_and(|p| p.read)
    }

    pub fn grants_write(&self, who: &IdentityId) -> bool {
        self.grants.get(who).is_some_and(|p| p.write)
    }

    pub fn to_value(&self) -> Value {
        let grants = self
            .grants
            .iter()
            .map(|(id, p)| {
                (id.to_hex(), Value::map().with("r", p.read).with("w", p.write).build())
            })
            .collect();
        Value::map().with("grants", Value::Map(grants)).with("public", self.public_read).build()
    }

    pub fn from_value(value: &Value) -> Result<Acl, CodecError> {
        let f = Fields::new(value, "acl")?.exact(&["grants", "public"])?;
        let public_read = f.get("public")?.as_bool().ok_or_else(|| shape("acl.public", "bool"))?;
        let raw = f.get("grants")?.as_map().ok_or_else(|| shape("acl.grants", "map"))?;
        let mut grants = BTreeMap::new();
        for (k, v) in raw {
            let id = k.parse::<IdentityId>().map_err(|_| shape("acl.grants", "identity hex key"))?;
            let p = Fields::new(v, "acl.grant")?.exact(&["r", "w"])?;
            let read = p.get("r")?.as_bool().ok_or_else(|| shape("acl.grant.r", "bool"))?;
            let write = p.get("w")?.as_bool().ok_or_else(|| shape("acl.grant.w", "bool"))?;
            grants.insert(id, Perms { read, write });
        }
        Ok(Acl { public_read, grants })
    }
}

fn shape(field: &str, expected: &str) -> CodecError {
    CodecError::Shape { field: field.to_owned(), reason: format!("expected {expected}") }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateEntry {
    pub value: Vec<u8>,
    pub version: u64,
    pub owner: IdentityId,
    pub acl: Acl,
}

impl StateEntry {
    pub fn decoded(&self) -> Result<Value, CodecError> {
        Value::decode(&self.value)
    }
}

/// One entry of a transaction's write set: the full new content of a key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateWrite {
    pub key: String,
    pub value: Vec<u8>,
    pub owner: IdentityId,
    pub acl: Acl,
}

impl StateWrite {
    pub fn to_value(&self) -> Value {
        Value::map()
            .with("acl", self.acl.to_value())
            .with("key", self.key.as_str())
            .with("owner", self.owner)
            .with("value", self.value.clone())
            .build()
    }

    pub fn from_value(value: &Value) -> Result<StateWrite, CodecError> {
        let f = Fields::new(value, "write")?.exact(&["acl", "key", "owner", "value"])?;
        Ok(StateWrite {
            key: f.str("key")?.to_owned(),
            value: f.bytes("value")?.to_vec(),
            owner: IdentityId(Hash(f.array("owner")?)),
            acl: Acl::from_value(f.get("acl")?)?,
        })
    }
}

/// Key/value store with per-key version, owner and ACL.
#[derive(Debug, Clone)]
pub struct WorldState {
    authority: IdentityId,
    entries: BTreeMap<String, StateEntry>,
    /// Memoized `root()`; cleared by every mutation.
    root: OnceLock<Hash>,
}

impl PartialEq for WorldState {
    fn eq(&self, other: &Self) -> bool {
        self.authority == other.authority && self.entries == other.entries
    }
}

impl Eq for WorldState {}

impl WorldState {
    pub fn new(authority: IdentityId) -> WorldState {
        WorldState { authority, entries: BTreeMap::new(), root: OnceLock::new() }
    }

    pub fn authority(&self) -> IdentityId {
        self.authority
    }

    pub fn get(&self, key: &str) -> Option<&StateEntry> {
        self.entries.get(key)
    }

    /// Current version, 0 for absent keys.
    pub fn version(&self, key: &str) -> u64 {
        self.entries.get(key).map_or(0, |e| e.version)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &StateEntry)> {
        self.entries.iter()
    }

    pub fn scan_prefix<'a>(
        &'a self,
        prefix: &'a str,
    ) -> impl Iterator<Item = (&'a String, &'a StateEntry)> + 'a {
        self.entries
            .range::<str, _>((std::ops::Bound::Included(prefix), std::ops::Bound::Unbounded))
            .take_while(move |(k, _)| k.starts_with(prefix))
    }

    /// Applies a write set, bumping each key's version by one.
    pub fn apply(&mut self, writes: &[StateWrite]) {
        if !writes.is_empty() {
            self.root = OnceLock::new();
        }
        for w in writes {
            let version = self.version(&w.key) + 1;
            self.entries.insert(
                w.key.clone(),
                StateEntry { value: w.value.clone(), version, owner: w.owner, acl: w.acl.clone() },
            );
        }
    }

    /// SHA-256 over the canonical encoding of every entry in key order.
    pub fn root(&self) -> Hash {
        *self.root.get_or_init(|| self.compute_root())
    }

    fn compute_root(&self) -> Hash {
        let map = self
            .entries
            .iter()
            .map(|(k, e)| {
                let v = Value::map()
                    .with("acl", e.acl.to_value())
                    .with("owner", e.owner)
                    .with("value", e.value.clone())
                    .with("version", e.version as i64)
                    .build();
                (k.clone(), v)
            })
            .collect();
        Hash::of_value(&Value::Map(map)).expect("state fits in u32 lengths")
    }

    /// Direct corruption hook for fault injection.
    pub(crate) fn corrupt(&mut self, key: &str) {
        self.root = OnceLock::new();
        match self.entries.get_mut(key) {
            Some(entry) => entry.value.push(0xee),
            None => {
                self.entries.insert(
                    key.to_owned(),
                    StateEntry {
                        value: vec![0xee],
                        version: 1,
                        owner: self.authority,
                        acl: Acl::private(),
                    },
                );
            }
        }
    }

    pub fn may_read(&self, key: &str, reader: &IdentityId) -> Result<bool, AccessError> {
        let entry = self.get(key).ok_or_else(|| AccessError::NotFound(key.to_owned()))?;
        Ok(may_read(entry, key, reader, &self.authority, |k| self.get(k)))
    }

    /// Permission-checked read outside transaction execution.
    pub fn read_as(&self, key: &str, reader: &IdentityId) -> Result<(&[u8], u64), AccessError> {
        if !self.may_read(key, reader)? {
            return Err(AccessError::Permission { who: *reader, action: "read", key: key.to_owned() });
        }
        let e = &self.entries[key];
        Ok((&e.value, e.version))
    }

    /// Permission-checked in-place write outside transaction execution.
    /// Creates the key owned by `writer` when absent.
    pub fn write_as(&mut self, key: &str, value: Vec<u8>, writer: &IdentityId) -> Result<u64, AccessError> {
        let write = match self.get(key) {
            Some(e) if may_write(e, writer, &self.authority) => {
                StateWrite { key: key.to_owned(), value, owner: e.owner, acl: e.acl.clone() }
            }
            Some(_) => {
                return Err(AccessError::Permission { who: *writer, action: "write", key: key.to_owned() })
            }
            None => StateWrite { key: key.to_owned(), value, owner: *writer, acl: Acl::private() },
        };
        self.apply(std::slice::from_ref(&write));
        Ok(self.version(key))
    }
}

pub fn may_write(entry: &StateEntry, writer: &IdentityId, authority: &IdentityId) -> bool {
    entry.owner == *writer || writer == authority || entry.acl.grants_write(writer)
}

/// Read decision for an existing entry. `lookup` resolves the consent grant
/// index so transaction execution can record that read too.
pub fn may_read<'a>(
    entry: &StateEntry,
    key: &str,
    reader: &IdentityId,
    authority: &IdentityId,
    lookup: impl FnOnce(&str) -> Option<&'a StateEntry>,
) -> bool {
    if entry.owner == *reader || reader == authority || entry.acl.grants_read(reader) {
        return true;
    }
    let Some(grants) = lookup(&grant_key(&entry.owner, reader)) else {
        return false;
    };
    ConsentGrants::decode(&grants.value).is_ok_and(|g| g.covers(key))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Role {
    Authority,
    Prosumer,
    Patient,
    Doctor,
    Notary,
    TaxService,
    Oracle,
}

impl Role {
    pub const ALL: [Role; 7] = [
        Role::Authority,
        Role::Prosumer,
        Role::Patient,
        Role::Doctor,
        Role::Notary,
        Role::TaxService,
        Role::Oracle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Authority => "authority",
            Role::Prosumer => "prosumer",
            Role::Patient => "patient",
            Role::Doctor => "doctor",
            Role::Notary => "notary",
            Role::TaxService => "taxService",
            Role::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Role, String> {
        Role::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown role `{s}`"))
    }
}

/// Registered principal, stored under `id/<hex>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Identity {
    pub id: IdentityId,
    pub role: Role,
    pub public_key: PublicKey,
    /// Authority signature over [`Identity::credential_body`].
    pub credential: Signature,
    pub district: Option<String>,
    /// Human-readable name; not part of the credential.
    pub label: String,
}

impl Identity {
    pub fn credential_body(id: &IdentityId, role: Role) -> Vec<u8> {
        Value::map()
            .with("id", *id)
            .with("role", role.as_str())
            .build()
            .encode()
            .expect("small value")
    }

    pub fn credential_valid(&self, authority_key: &PublicKey) -> bool {
        self.credential.verify(authority_key, &Identity::credential_body(&self.id, self.role))
    }

    pub fn to_value(&self) -> Value {
        Value::map()
            .with("credential", self.credential.to_value())
            .with("district", self.district.clone())
            .with("id", self.id)
            .with("label", self.label.as_str())
            .with("publicKey", self.public_key)
            .with("role", self.role.as_str())
            .build()
    }

    pub fn from_value(value: &Value) -> Result<Identity, CodecError> {
        let f = Fields::new(value, "identity")?
            .exact(&["credential", "district", "id", "label", "publicKey", "role"])?;
        let role = f.str("role")?.parse::<Role>().map_err(|e| shape("identity.role", &e))?;
        let district = match f.get("district")? {
            Value::Null => None,
            Value::Str(s) => Some(s.clone()),
            _ => return Err(shape("identity.district", "string or null")),
        };
        Ok(Identity {
            id: IdentityId(Hash(f.array("id")?)),
            role,
            public_key: PublicKey(f.array("publicKey")?),
            credential: Signature::from_value(f.get("credential")?)?,
            district,
            label: f.str("label")?.to_owned(),
        })
    }

    pub fn decode(bytes: &[u8]) -> Result<Identity, CodecError> {
        Identity::from_value(&Value::decode(bytes)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ConsentStatus {
    Requested,
    Approved,
    Denied,
    Revoked,
}

impl ConsentStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ConsentStatus::Requested => "requested",
            ConsentStatus::Approved => "approved",
            ConsentStatus::Denied => "denied",
            ConsentStatus::Revoked => "revoked",
        }
    }

    /// requested→approved, requested→denied, approved→revoked.
    pub fn can_become(self, next: ConsentStatus) -> bool {
        use ConsentStatus::*;
        matches!((self, next), (Requested, Approved) | (Requested, Denied) | (Approved, Revoked))
    }
}

impl FromStr for ConsentStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        [
            ConsentStatus::Requested,
            ConsentStatus::Approved,
            ConsentStatus::Denied,
            ConsentStatus::Revoked,
        ]
        .into_iter()
        .find(|c| c.as_str() == s)
        .ok_or_else(|| format!("unknown consent status `{s}`"))
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConsentError {
    #[error("illegal consent transition {from} -> {to}", from = .from.as_str(), to = .to.as_str())]
    IllegalTransition { from: ConsentStatus, to: ConsentStatus },
    #[error("{actor:?} may not move consent to {status}", status = .status.as_str())]
    WrongActor { actor: IdentityId, status: ConsentStatus },
    #[error("decision time {decided} precedes request time {requested}")]
    TimeTravel { requested: u64, decided: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsentRecord {
    pub consent_id: Hash,
    pub requester: IdentityId,
    pub subject: IdentityId,
    /// Key prefix the consent covers, e.g. `health/<patient>/`.
    pub resource_key: String,
    pub purpose: String,
    pub status: ConsentStatus,
    pub requested_at: u64,
    pub decided_at: Option<u64>,
}

impl ConsentRecord {
    pub fn key(consent_id: &Hash) -> String {
        format!("{NS_CONSENT}{}", consent_id.to_hex())
    }

    /// History slot for the record as of `version`; never overwritten.
    pub fn history_key(consent_id: &Hash, version: u64) -> String {
        format!("{NS_CONSENT}{}/h/{version:06}", consent_id.to_hex())
    }

    pub fn transition(
        &self,
        next: ConsentStatus,
        actor: &IdentityId,
        at: u64,
    ) -> Result<ConsentRecord, ConsentError> {
        if !self.status.can_become(next) {
            return Err(ConsentError::IllegalTransition { from: self.status, to: next });
        }
        if *actor != self.subject {
            return Err(ConsentError::WrongActor { actor: *actor, status: next });
        }
        if at < self.requested_at {
            return Err(ConsentError::TimeTravel { requested: self.requested_at, decided: at });
        }
        Ok(ConsentRecord { status: next, decided_at: Some(at), ..self.clone() })
    }

    pub fn to_value(&self) -> Value {
        Value::map()
            .with("consentId", self.consent_id)
            .with("decidedAt", self.decided_at.map(|t| t as i64))
            .with("purpose", self.purpose.as_str())
            .with("requestedAt", self.requested_at as i64)
            .with("requester", self.requester)
            .with("resourceKey", self.resource_key.as_str())
            .with("status", self.status.as_str())
            .with("subject", self.subject)
            .build()
    }

    pub fn from_value(value: &Value) -> Result<ConsentRecord, CodecError> {
        let f = Fields::new(value, "consent")?.exact(&[
            "consentId",
            "decidedAt",
            "purpose",
            "requestedAt",
            "requester",
            "resourceKey",
            "status",
            "subject",
        ])?;
        let decided_at = match f.get("decidedAt")? {
            Value::Null => None,
            Value::Int(t) if *t >= 0 => Some(*t as u64),
            _ => return Err(shape("consent.decidedAt", "non-negative int or null")),
        };
        Ok(ConsentRecord {
            consent_id: Hash(f.array("consentId")?),
            requester: IdentityId(Hash(f.array("requester")?)),
            subject: IdentityId(Hash(f.array("subject")?)),
            resource_key: f.str("resourceKey")?.to_owned(),
            purpose: f.str("purpose")?.to_owned(),
            status: f.str("status")?.parse().map_err(|e: String| shape("consent.status", &e))?,
            requested_at: f.uint("requestedAt")?,
            decided_at,
        })
    }

    pub fn decode(bytes: &[u8]) -> Result<ConsentRecord, CodecError> {
        ConsentRecord::from_value(&Value::decode(bytes)?)
    }
}

/// Index key listing the approved, unrevoked prefixes `subject` has opened to `reader`.
pub fn grant_key(subject: &IdentityId, reader: &IdentityId) -> String {
    format!("{NS_CONSENT}grant/{}/{}", subject.to_hex(), reader.to_hex())
}

/// Per (subject, reader) pair: live grants and requests awaiting a decision.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConsentGrants {
    /// (resource prefix, consent id) of approved consents.
    pub granted: Vec<(String, Hash)>,
    /// (resource prefix, consent id) of requests still in `requested`.
    pub pending: Vec<(String, Hash)>,
}

impl ConsentGrants {
    pub fn covers(&self, key: &str) -> bool {
        self.granted.iter().any(|(prefix, _)| key.starts_with(prefix.as_str()))
    }

    fn pairs_to_value(pairs: &[(String, Hash)]) -> Value {
        Value::List(
            pairs
                .iter()
                .map(|(p, id)| Value::List(vec![Value::Str(p.clone()), (*id).into()]))
                .collect(),
        )
    }

    fn pairs_from_value(items: &[Value]) -> Result<Vec<(String, Hash)>, CodecError> {
        items
            .iter()
            .map(|item| match item.as_list() {
                Some([Value::Str(p), Value::Bytes(id)]) if id.len() == 32 => {
                    Ok((p.clone(), Hash(id.as_slice().try_into().expect("32 bytes"))))
                }
                _ => Err(shape("grants", "[prefix, id] pair")),
            })
            .collect()
    }

    pub fn to_value(&self) -> Value {
        Value::map()
            .with("granted", ConsentGrants::pairs_to_value(&self.granted))
            .with("pending", ConsentGrants::pairs_to_value(&self.pending))
            .build()
    }

    pub fn encode(&self) -> Vec<u8> {
        self.to_value().encode().expect("small value")
    }

    pub fn decode(bytes: &[u8]) -> Result<ConsentGrants, CodecError> {
        let v = Value::decode(bytes)?;
        let f = Fields::new(&v, "grants")?.exact(&["granted", "pending"])?;
        Ok(ConsentGrants {
            granted: ConsentGrants::pairs_from_value(f.list("granted")?)?,
            pending: ConsentGrants::pairs_from_value(f.list("pending")?)?,
        })
    }
}
