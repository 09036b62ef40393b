//! Deterministic contract execution: dispatch, read/write-set capture,
//! K-of-N endorsement, MVCC commit and replay.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::codec::{CodecError, Value};
use crate::crypto::{Hash, IdentityId, PublicKey};
use crate::ledger::{self, Block, LedgerError, LedgerFile, LedgerMode, Transaction, TxOutcome, TxRequest};
use crate::state::{self, Acl, Identity, Role, StateEntry, StateWrite, WorldState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub enum Category {
    /// Fixed control path, no branching on state.
    Static,
    Dynamic,
    /// Consumes external facts written under `oracle/`.
    OracleDriven,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ErrorCode {
    Permission,
    NotFound,
    Duplicate,
    DuplicateRequest,
    ConsentState,
    Ordering,
    Validation,
    Protocol,
    Config,
    InvalidArgs,
}

impl ErrorCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::Permission => "permission",
            ErrorCode::NotFound => "notFound",
            ErrorCode::Duplicate => "duplicate",
            ErrorCode::DuplicateRequest => "duplicateRequest",
            ErrorCode::ConsentState => "consentState",
            ErrorCode::Ordering => "ordering",
            ErrorCode::Validation => "validation",
            ErrorCode::Protocol => "protocol",
            ErrorCode::Config => "config",
            ErrorCode::InvalidArgs => "invalidArgs",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{code}: {message}")]
pub struct ContractError {
    pub code: ErrorCode,
    pub message: String,
}

impl ContractError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> ContractError {
        ContractError { code, message: message.into() }
    }

    pub fn permission(message: impl Into<String>) -> ContractError {
        ContractError::new(ErrorCode::Permission, message)
    }

    pub fn args(message: impl Into<String>) -> ContractError {
        ContractError::new(ErrorCode::InvalidArgs, message)
    }
}

impl From<CodecError> for ContractError {
    fn from(e: CodecError) -> Self {
        ContractError::new(ErrorCode::InvalidArgs, e.to_string())
    }
}

pub type HandlerResult = Result<Value, ContractError>;
pub type Handler = Arc<dyn Fn(&mut TxContext<'_>, &Value) -> HandlerResult + Send + Sync>;

#[derive(Clone)]
pub struct Contract {
    pub name: String,
    pub category: Category,
    pub operations: BTreeMap<String, Handler>,
}

impl Contract {
    pub fn new(name: &str, category: Category) -> Contract {
        Contract { name: name.to_owned(), category, operations: BTreeMap::new() }
    }

    pub fn op(
        mut self,
        name: &str,
        handler: impl Fn(&mut TxContext<'_>, &Value) -> HandlerResult + Send + Sync + 'static,
    ) -> Contract {
        self.operations.insert(name.to_owned(), Arc::new(handler));
        self
    }
}

impl fmt::Debug for Contract {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Contract")
            .field("name", &self.name)
            .field("category", &self.category)
            .field("operations", &self.operations.keys().collect::<Vec<_>>())
            .finish()
    }
}

#[derive(Debug, Clone, Default)]
pub struct ContractRegistry {
    contracts: BTreeMap<String, Contract>,
}

impl ContractRegistry {
    pub fn new() -> ContractRegistry {
        ContractRegistry::default()
    }

    pub fn register(&mut self, contract: Contract) {
        self.contracts.insert(contract.name.clone(), contract);
    }

    pub fn with(mut self, contract: Contract) -> ContractRegistry {
        self.register(contract);
        self
    }

    pub fn get(&self, name: &str) -> Option<&Contract> {
        self.contracts.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Contract> {
        self.contracts.values()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Event {
    pub name: String,
    #[serde(serialize_with = "ser_payload")]
    pub payload: Vec<u8>,
    pub source_tx: Hash,
}

fn ser_payload<S: serde::Serializer>(payload: &[u8], s: S) -> Result<S::Ok, S::Error> {
    match Value::decode(payload) {
        Ok(v) => v.to_json().serialize(s),
        Err(_) => s.serialize_str(&hex::encode(payload)),
    }
}

impl Event {
    pub fn payload_value(&self) -> Option<Value> {
        Value::decode(&self.payload).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExecOutcome {
    Success,
    ContractError(ErrorCode),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionResult {
    pub read_set: Vec<(String, u64)>,
    pub write_set: Vec<StateWrite>,
    pub events: Vec<Event>,
    pub return_value: Vec<u8>,
    pub outcome: ExecOutcome,
}

impl ExecutionResult {
    /// Canonical bytes; endorsement compares these.
    pub fn to_bytes(&self) -> Vec<u8> {
        let outcome = match &self.outcome {
            ExecOutcome::Success => Value::from("success"),
            ExecOutcome::ContractError(code) => Value::from(format!("error:{code}")),
        };
        Value::map()
            .with(
                "events",
                self.events
                    .iter()
                    .map(|e| {
                        Value::map()
                            .with("name", e.name.as_str())
                            .with("payload", e.payload.clone())
                            .with("sourceTx", e.source_tx)
                            .build()
                    })
                    .collect::<Vec<_>>(),
            )
            .with("outcome", outcome)
            .with(
                "readSet",
                self.read_set
                    .iter()
                    .map(|(k, v)| Value::List(vec![k.as_str().into(), Value::Int(*v as i64)]))
                    .collect::<Vec<_>>(),
            )
            .with("returnValue", self.return_value.clone())
            .with("writeSet", self.write_set.iter().map(StateWrite::to_value).collect::<Vec<_>>())
            .build()
            .encode()
            .expect("result fits")
    }

    pub fn return_value(&self) -> Option<Value> {
        Value::decode(&self.return_value).ok()
    }

    pub fn tx_outcome(&self) -> TxOutcome {
        match &self.outcome {
            ExecOutcome::Success => TxOutcome::Success,
            ExecOutcome::ContractError(code) => TxOutcome::Failed(code.as_str().to_owned()),
        }
    }
}

/// Everything a handler may observe or change while executing one request.
pub struct TxContext<'a> {
    snapshot: &'a WorldState,
    invoker: IdentityId,
    role: Role,
    logical_time: u64,
    request_id: Hash,
    reads: BTreeMap<String, u64>,
    writes: BTreeMap<String, StateWrite>,
    events: Vec<Event>,
}

impl<'a> TxContext<'a> {
    pub fn invoker(&self) -> IdentityId {
        self.invoker
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn logical_time(&self) -> u64 {
        self.logical_time
    }

    /// Digest of the signed request; stable across peers before ordering.
    pub fn request_id(&self) -> Hash {
        self.request_id
    }

    pub fn authority(&self) -> IdentityId {
        self.snapshot.authority()
    }

    pub fn require_role(&self, role: Role) -> Result<(), ContractError> {
        if self.role == role {
            Ok(())
        } else {
            Err(ContractError::permission(format!("requires role {role}, invoker is {}", self.role)))
        }
    }

    fn note_read(&mut self, key: &str) {
        if !self.reads.contains_key(key) && !self.writes.contains_key(key) {
            self.reads.insert(key.to_owned(), self.snapshot.version(key));
        }
    }

    /// Current view of `key` including this transaction's own writes.
    fn view(&mut self, key: &str) -> Option<StateEntry> {
        self.note_read(key);
        if let Some(w) = self.writes.get(key) {
            return Some(StateEntry {
                value: w.value.clone(),
                version: self.snapshot.version(key) + 1,
                owner: w.owner,
                acl: w.acl.clone(),
            });
        }
        self.snapshot.get(key).cloned()
    }

    fn permitted(&mut self, key: &str, entry: &StateEntry) -> bool {
        if entry.owner == self.invoker
            || self.invoker == self.snapshot.authority()
            || entry.acl.grants_read(&self.invoker)
        {
            return true;
        }
        let grants = self.view(&state::grant_key(&entry.owner, &self.invoker));
        grants.is_some_and(|g| state::ConsentGrants::decode(&g.value).is_ok_and(|g| g.covers(key)))
    }

    /// Permission-checked read. `Ok(None)` when the key does not exist.
    pub fn read(&mut self, key: &str) -> Result<Option<Vec<u8>>, ContractError> {
        let Some(entry) = self.view(key) else { return Ok(None) };
        if self.permitted(key, &entry) {
            Ok(Some(entry.value))
        } else {
            Err(ContractError::permission(format!("read of `{key}` denied")))
        }
    }

    pub fn read_value(&mut self, key: &str) -> Result<Option<Value>, ContractError> {
        self.read(key)?.map(|b| Value::decode(&b).map_err(ContractError::from)).transpose()
    }

    pub fn can_read(&mut self, key: &str) -> bool {
        match self.view(key) {
            Some(entry) => self.permitted(key, &entry),
            None => false,
        }
    }

    pub fn exists(&mut self, key: &str) -> bool {
        self.view(key).is_some()
    }

    pub fn acl_of(&mut self, key: &str) -> Option<Acl> {
        self.view(key).map(|e| e.acl)
    }

    pub fn owner_of(&mut self, key: &str) -> Option<IdentityId> {
        self.view(key).map(|e| e.owner)
    }

    /// Keys under `prefix` (snapshot plus own writes), each recorded as read.
    /// Listing is not permission-gated; values are.
    pub fn scan_keys(&mut self, prefix: &str) -> Vec<String> {
        let mut keys: BTreeSet<String> =
            self.snapshot.scan_prefix(prefix).map(|(k, _)| k.clone()).collect();
        keys.extend(self.writes.keys().filter(|k| k.starts_with(prefix)).cloned());
        for k in &keys {
            self.note_read(k);
        }
        keys.into_iter().collect()
    }

    fn check_oracle_namespace(&self, key: &str) -> Result<(), ContractError> {
        if key.starts_with(state::NS_ORACLE) && self.role != Role::Oracle {
            return Err(ContractError::permission(format!("only oracles write `{key}`")));
        }
        Ok(())
    }

    /// Overwrites an existing key (keeping owner and ACL) or creates it owned
    /// by the invoker with a private ACL.
    pub fn write(&mut self, key: &str, value: Vec<u8>) -> Result<(), ContractError> {
        self.check_oracle_namespace(key)?;
        let (owner, acl) = match self.view(key) {
            Some(e) if state::may_write(&e, &self.invoker, &self.snapshot.authority()) => (e.owner, e.acl),
            Some(_) => return Err(ContractError::permission(format!("write of `{key}` denied"))),
            None => (self.invoker, Acl::private()),
        };
        self.writes.insert(key.to_owned(), StateWrite { key: key.to_owned(), value, owner, acl });
        Ok(())
    }

    pub fn write_value(&mut self, key: &str, value: &Value) -> Result<(), ContractError> {
        self.write(key, value.encode()?)
    }

    /// Creates a fresh key with an explicit owner and ACL.
    pub fn insert(&mut self, key: &str, value: &Value, owner: IdentityId, acl: Acl) -> Result<(), ContractError> {
        self.check_oracle_namespace(key)?;
        if self.exists(key) {
            return Err(ContractError::new(ErrorCode::Duplicate, format!("`{key}` already exists")));
        }
        self.writes.insert(key.to_owned(), StateWrite { key: key.to_owned(), value: value.encode()?, owner, acl });
        Ok(())
    }

    /// Owner or authority only.
    pub fn set_acl(&mut self, key: &str, acl: Acl) -> Result<(), ContractError> {
        let entry = self
            .view(key)
            .ok_or_else(|| ContractError::new(ErrorCode::NotFound, format!("`{key}` not found")))?;
        if entry.owner != self.invoker && self.invoker != self.snapshot.authority() {
            return Err(ContractError::permission(format!("acl of `{key}` is owner-controlled")));
        }
        self.writes.insert(
            key.to_owned(),
            StateWrite { key: key.to_owned(), value: entry.value, owner: entry.owner, acl },
        );
        Ok(())
    }

    pub fn emit(&mut self, name: &str, payload: &Value) -> Result<(), ContractError> {
        self.events.push(Event { name: name.to_owned(), payload: payload.encode()?, source_tx: self.request_id });
        Ok(())
    }

    /// Reads an identity record. Identity records are world-readable.
    pub fn identity(&mut self, id: &IdentityId) -> Result<Option<Identity>, ContractError> {
        match self.read(&state::identity_key(id))? {
            Some(bytes) => Ok(Some(Identity::decode(&bytes)?)),
            None => Ok(None),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("unknown contract `{0}`")]
    UnknownContract(String),
    #[error("contract `{contract}` has no operation `{operation}`")]
    UnknownOperation { contract: String, operation: String },
    #[error("unknown identity {0:?}")]
    UnknownIdentity(IdentityId),
    #[error("identity {0:?} has no valid authority credential")]
    BadCredential(IdentityId),
    #[error("bad signature from {0:?}")]
    BadSignature(IdentityId),
    #[error("malformed arguments: {0}")]
    BadArgs(String),
    #[error("peers disagree on the starting state root")]
    StateDivergence { roots: Vec<Hash> },
    #[error("quorum {k} invalid for {n} peers")]
    BadQuorum { k: usize, n: usize },
}

impl EngineError {
    /// Outcome code when this check fails while re-executing an ordered block.
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::UnknownContract(_) | EngineError::UnknownOperation { .. } => "dispatch",
            EngineError::UnknownIdentity(_) | EngineError::BadCredential(_) => "unknownIdentity",
            EngineError::BadSignature(_) => "signature",
            EngineError::BadArgs(_) => "invalidArgs",
            EngineError::StateDivergence { .. } | EngineError::BadQuorum { .. } => "engine",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct EndorsementDecision {
    pub accepted: bool,
    pub required: usize,
    /// Size of the largest group of byte-identical results.
    pub agreeing: usize,
    /// Peer indices outside the largest group.
    pub divergent_peers: Vec<usize>,
    /// Distinct result digests, one per peer.
    pub result_digests: Vec<Hash>,
    #[serde(skip)]
    pub result: Option<ExecutionResult>,
}

/// A committed transaction with its delivered events.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommitReceipt {
    pub tx: Transaction,
    pub events: Vec<Event>,
    pub return_value: Option<Value>,
    /// Set when the read set was stale and the transaction aborted.
    pub mvcc_conflict: Option<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReplayError {
    #[error("ledger: {0}")]
    Ledger(String),
    #[error("replay diverged at block height {height} (index {index}): {reason}")]
    Divergence { height: u64, index: usize, reason: String },
}

impl From<LedgerError> for ReplayError {
    fn from(e: LedgerError) -> Self {
        ReplayError::Ledger(e.to_string())
    }
}

/// Stateless executor over a contract set and a network authority.
#[derive(Clone)]
pub struct Engine {
    contracts: Arc<ContractRegistry>,
    authority: IdentityId,
    authority_key: PublicKey,
}

impl fmt::Debug for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Engine").field("authority", &self.authority).finish_non_exhaustive()
    }
}

impl Engine {
    pub fn new(contracts: ContractRegistry, authority: IdentityId, authority_key: PublicKey) -> Engine {
        Engine { contracts: Arc::new(contracts), authority, authority_key }
    }

    /// Takes the authority from the genesis transaction, which must be the
    /// authority's self-registration carrying its public key.
    pub fn for_ledger(contracts: ContractRegistry, ledger: &LedgerFile) -> Result<Engine, ReplayError> {
        let (authority, key) = genesis_authority(ledger)?;
        Ok(Engine::new(contracts, authority, key))
    }

    pub fn authority(&self) -> IdentityId {
        self.authority
    }

    pub fn authority_key(&self) -> PublicKey {
        self.authority_key
    }

    pub fn contracts(&self) -> &ContractRegistry {
        &self.contracts
    }

    pub fn empty_state(&self) -> WorldState {
        WorldState::new(self.authority)
    }

    /// Signature, registration and dispatch checks that precede execution.
    pub fn check_request(&self, snapshot: &WorldState, req: &TxRequest) -> Result<Role, EngineError> {
        let contract = self
            .contracts
            .get(&req.contract)
            .ok_or_else(|| EngineError::UnknownContract(req.contract.clone()))?;
        if !contract.operations.contains_key(&req.operation) {
            return Err(EngineError::UnknownOperation {
                contract: req.contract.clone(),
                operation: req.operation.clone(),
            });
        }
        let (key, role) = if req.invoker == self.authority {
            (self.authority_key, Role::Authority)
        } else {
            let entry = snapshot
                .get(&state::identity_key(&req.invoker))
                .ok_or(EngineError::UnknownIdentity(req.invoker))?;
            let identity = Identity::decode(&entry.value).map_err(|_| EngineError::BadCredential(req.invoker))?;
            if identity.id != req.invoker || !identity.credential_valid(&self.authority_key) {
                return Err(EngineError::BadCredential(req.invoker));
            }
            (identity.public_key, identity.role)
        };
        if !req.verify_signature(&key) {
            return Err(EngineError::BadSignature(req.invoker));
        }
        Ok(role)
    }

    /// Runs one request against an immutable snapshot.
    pub fn execute_transaction(&self, snapshot: &WorldState, req: &TxRequest) -> Result<ExecutionResult, EngineError> {
        let role = self.check_request(snapshot, req)?;
        let args = req.args_value().map_err(|e| EngineError::BadArgs(e.to_string()))?;
        let handler = &self.contracts.get(&req.contract).expect("checked").operations[&req.operation];
        let mut ctx = TxContext {
            snapshot,
            invoker: req.invoker,
            role,
            logical_time: req.logical_time,
            request_id: req.request_id(),
            reads: BTreeMap::new(),
            writes: BTreeMap::new(),
            events: Vec::new(),
        };
        let outcome = handler(&mut ctx, &args);
        let read_set = ctx.reads.into_iter().collect();
        Ok(match outcome {
            Ok(ret) => ExecutionResult {
                read_set,
                write_set: ctx.writes.into_values().collect(),
                events: ctx.events,
                return_value: ret.encode().unwrap_or_default(),
                outcome: ExecOutcome::Success,
            },
            Err(err) => ExecutionResult {
                read_set,
                write_set: Vec::new(),
                events: Vec::new(),
                return_value: Value::from(err.message.as_str()).encode().unwrap_or_default(),
                outcome: ExecOutcome::ContractError(err.code),
            },
        })
    }

    /// Executes on every peer snapshot and accepts iff at least `k` results
    /// are byte-identical.
    pub fn endorse(&self, req: &TxRequest, peers: &[&WorldState], k: usize) -> Result<EndorsementDecision, EngineError> {
        if k == 0 || k > peers.len() {
            return Err(EngineError::BadQuorum { k, n: peers.len() });
        }
        let roots: Vec<Hash> = peers.par_iter().map(|p| p.root()).collect();
        if roots.windows(2).any(|w| w[0] != w[1]) {
            return Err(EngineError::StateDivergence { roots });
        }
        self.check_request(peers[0], req)?;
        let results: Vec<ExecutionResult> = peers
            .par_iter()
            .map(|p| self.execute_transaction(p, req))
            .collect::<Result<_, _>>()?;
        let digests: Vec<Hash> = results.iter().map(|r| Hash::digest(&r.to_bytes())).collect();
        let mut groups: BTreeMap<Hash, Vec<usize>> = BTreeMap::new();
        for (i, d) in digests.iter().enumerate() {
            groups.entry(*d).or_default().push(i);
        }
        // largest group; ties go to the group containing the lowest peer index
        let best = groups
            .values()
            .max_by(|a, b| a.len().cmp(&b.len()).then(b[0].cmp(&a[0])))
            .expect("at least one peer")
            .clone();
        let accepted = best.len() >= k;
        Ok(EndorsementDecision {
            accepted,
            required: k,
            agreeing: best.len(),
            divergent_peers: (0..peers.len()).filter(|i| !best.contains(i)).collect(),
            result_digests: digests,
            result: accepted.then(|| results[best[0]].clone()),
        })
    }

    /// Validates the read set against `state` and applies the write set.
    /// Stale reads abort the transaction; it is still returned for logging.
    pub fn commit(&self, state: &mut WorldState, result: &ExecutionResult, req: &TxRequest, seq_no: u64) -> CommitReceipt {
        let stale = result
            .read_set
            .iter()
            .find(|(k, v)| state.version(k) != *v)
            .map(|(k, v)| format!("`{k}` read at version {v}, now {}", state.version(k)));
        let (outcome, writes) = match (&result.outcome, &stale) {
            (ExecOutcome::Success, None) => (TxOutcome::Success, result.write_set.clone()),
            (ExecOutcome::Success, Some(_)) => (TxOutcome::Aborted, Vec::new()),
            (ExecOutcome::ContractError(_), _) => (result.tx_outcome(), Vec::new()),
        };
        state.apply(&writes);
        let tx = Transaction::from_request(req, seq_no, result.read_set.clone(), writes, outcome);
        let events = if tx.outcome.is_success() {
            result.events.iter().map(|e| Event { source_tx: tx.tx_id, ..e.clone() }).collect()
        } else {
            Vec::new()
        };
        CommitReceipt {
            events,
            return_value: result.return_value(),
            mvcc_conflict: if result.outcome == ExecOutcome::Success { stale } else { None },
            tx,
        }
    }

    /// Executes an ordered batch: every request runs against the block-start
    /// snapshot, commits apply sequentially with MVCC validation.
    pub fn execute_block(&self, start: &WorldState, reqs: &[TxRequest], first_seq: u64) -> (WorldState, Vec<CommitReceipt>) {
        let mut working = start.clone();
        let mut receipts = Vec::with_capacity(reqs.len());
        for (i, req) in reqs.iter().enumerate() {
            let seq = first_seq + i as u64;
            let receipt = match self.execute_transaction(start, req) {
                Ok(result) => self.commit(&mut working, &result, req, seq),
                Err(e) => CommitReceipt {
                    tx: Transaction::from_request(req, seq, Vec::new(), Vec::new(), TxOutcome::Failed(e.code().into())),
                    events: Vec::new(),
                    return_value: None,
                    mvcc_conflict: None,
                },
            };
            receipts.push(receipt);
        }
        (working, receipts)
    }

    fn replay_block(&self, state: &WorldState, block: &Block, index: usize) -> Result<WorldState, ReplayError> {
        let reqs: Vec<TxRequest> = block.transactions.iter().map(Transaction::request).collect();
        let first = block.first_seq().unwrap_or(0);
        let (next, receipts) = self.execute_block(state, &reqs, first);
        for (recorded, receipt) in block.transactions.iter().zip(&receipts) {
            if recorded.tx_id != receipt.tx.tx_id || *recorded != receipt.tx {
                return Err(ReplayError::Divergence {
                    height: block.height,
                    index,
                    reason: format!(
                        "tx seq {} re-executed to {} (recorded {})",
                        recorded.seq_no,
                        receipt.tx.outcome.label(),
                        recorded.outcome.label()
                    ),
                });
            }
        }
        Ok(next)
    }

    fn root_mismatch(block: &Block, index: usize, got: Hash) -> ReplayError {
        ReplayError::Divergence {
            height: block.height,
            index,
            reason: format!("state root {} recorded, {} recomputed", block.state_root.short(), got.short()),
        }
    }

    /// Re-executes the whole ledger and checks every recorded transaction
    /// and state root. Returns the final state.
    ///
    /// Each block is checked against the state of its own ancestor closure
    /// (in linearized order), which for a chain is simply the previous state.
    pub fn replay_state(&self, ledger: &LedgerFile) -> Result<WorldState, ReplayError> {
        let blocks = ledger.blocks();
        let order: Vec<usize> = match ledger.mode() {
            LedgerMode::Chain => (0..blocks.len()).collect(),
            LedgerMode::Dag => ledger::linearize(blocks)?,
        };
        let mut full = self.empty_state();
        let mut applied = BTreeSet::new();
        for &i in &order {
            let block = &blocks[i];
            let closure = match ledger.mode() {
                LedgerMode::Chain => applied.clone(),
                LedgerMode::Dag => ledger::ancestors(blocks, i)?,
            };
            let linear = closure == applied;
            let start = if linear { full.clone() } else { self.state_of(blocks, &order, &closure) };
            let next = self.replay_block(&start, block, i)?;
            if next.root() != block.state_root {
                return Err(Engine::root_mismatch(block, i, next.root()));
            }
            full = if linear { next } else { self.apply_block(&full, block) };
            applied.insert(i);
        }
        Ok(full)
    }

    /// Re-executes a recorded block without comparing against its records.
    pub fn apply_block(&self, state: &WorldState, block: &Block) -> WorldState {
        let reqs: Vec<TxRequest> = block.transactions.iter().map(Transaction::request).collect();
        self.execute_block(state, &reqs, block.first_seq().unwrap_or(0)).0
    }

    /// State after executing the blocks in `subset`, taken in `order`.
    pub fn state_of(&self, blocks: &[Block], order: &[usize], subset: &BTreeSet<usize>) -> WorldState {
        order
            .iter()
            .filter(|i| subset.contains(i))
            .fold(self.empty_state(), |s, &i| self.apply_block(&s, &blocks[i]))
    }

    pub fn replay_from_genesis(&self, ledger: &LedgerFile) -> Result<Hash, ReplayError> {
        self.replay_state(ledger).map(|s| s.root())
    }
}

/// Authority identity and key carried by the genesis self-registration.
pub fn genesis_authority(ledger: &LedgerFile) -> Result<(IdentityId, PublicKey), ReplayError> {
    let genesis = ledger
        .blocks()
        .iter()
        .find(|b| b.parent_hashes.is_empty())
        .and_then(|b| b.transactions.first())
        .ok_or_else(|| ReplayError::Ledger("ledger has no genesis transaction".into()))?;
    let args = genesis.args_value().map_err(|e| ReplayError::Ledger(e.to_string()))?;
    let key = args
        .get("publicKey")
        .and_then(Value::as_bytes)
        .and_then(|b| <[u8; 32]>::try_from(b).ok())
        .map(PublicKey)
        .ok_or_else(|| ReplayError::Ledger("genesis does not register the authority".into()))?;
    if crate::crypto::IdentityId::of_key(&key) != genesis.invoker {
        return Err(ReplayError::Ledger("genesis key does not match its invoker".into()));
    }
    Ok((genesis.invoker, key))
}

/// Typed argument access for handlers.
pub mod args {
    use super::ContractError;
    use crate::codec::Value;
    use crate::crypto::{Hash, IdentityId};
    use crate::fixed::Fixed;

    pub fn get<'a>(args: &'a Value, key: &str) -> Result<&'a Value, ContractError> {
        args.get(key).ok_or_else(|| ContractError::args(format!("missing `{key}`")))
    }

    pub fn opt<'a>(args: &'a Value, key: &str) -> Option<&'a Value> {
        args.get(key).filter(|v| **v != Value::Null)
    }

    pub fn str<'a>(args: &'a Value, key: &str) -> Result<&'a str, ContractError> {
        get(args, key)?.as_str().ok_or_else(|| ContractError::args(format!("`{key}` must be a string")))
    }

    pub fn int(args: &Value, key: &str) -> Result<i64, ContractError> {
        get(args, key)?.as_int().ok_or_else(|| ContractError::args(format!("`{key}` must be an int")))
    }

    pub fn uint(args: &Value, key: &str) -> Result<u64, ContractError> {
        u64::try_from(int(args, key)?).map_err(|_| ContractError::args(format!("`{key}` must be non-negative")))
    }

    pub fn bytes<'a>(args: &'a Value, key: &str) -> Result<&'a [u8], ContractError> {
        get(args, key)?.as_bytes().ok_or_else(|| ContractError::args(format!("`{key}` must be bytes")))
    }

    pub fn array<const N: usize>(args: &Value, key: &str) -> Result<[u8; N], ContractError> {
        bytes(args, key)?.try_into().map_err(|_| ContractError::args(format!("`{key}` must be {N} bytes")))
    }

    pub fn hash(args: &Value, key: &str) -> Result<Hash, ContractError> {
        array(args, key).map(Hash)
    }

    pub fn id(args: &Value, key: &str) -> Result<IdentityId, ContractError> {
        hash(args, key).map(IdentityId)
    }

    pub fn fixed(args: &Value, key: &str) -> Result<Fixed, ContractError> {
        str(args, key)?.parse().map_err(|e| ContractError::args(format!("`{key}`: {e}")))
    }

    pub fn list<'a>(args: &'a Value, key: &str) -> Result<&'a [Value], ContractError> {
        get(args, key)?.as_list().ok_or_else(|| ContractError::args(format!("`{key}` must be a list")))
    }
}
