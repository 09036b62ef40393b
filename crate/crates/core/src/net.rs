//! In-process permissioned network: N peer replicas, one ordering authority
//! that also signs blocks, endorsement-gated submission, and fault injection.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::Value;
use crate::crypto::{Hash, KeyPair};
use crate::engine::{
    Category, CommitReceipt, Contract, ContractRegistry, EndorsementDecision, Engine, EngineError, Event,
    ExecutionResult,
};
use crate::ledger::{self, Block, KeyRegistry, LedgerError, LedgerFile, LedgerMode, RawLedger, TxRequest, VerificationReport};
use crate::state::{Identity, Role, WorldState};
use crate::{energy, gov, health, oracle, policy};

/// Every contract a network starts with.
pub fn builtin_contracts() -> ContractRegistry {
    ContractRegistry::new()
        .with(policy::identity_contract())
        .with(policy::data_contract())
        .with(policy::consent_contract())
        .with(policy::system_contract())
        .with(gov::diploma_contract())
        .with(gov::thermostat_contract())
        .with(gov::land_contract())
        .with(oracle::oracle_contract())
        .with(oracle::law_contract())
        .with(energy::energy_contract())
        .with(health::health_contract())
}

pub const WALL_CLOCK: &str = "wallClock";

/// Test-only contract that breaks the determinism rule by writing the wall
/// clock. Every call observes a distinct value.
pub fn wall_clock_contract() -> Contract {
    static LAST: AtomicU64 = AtomicU64::new(0);
    Contract::new(WALL_CLOCK, Category::Dynamic).op("stamp", |ctx, _| {
        let now = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_nanos() as u64);
        let stamp = LAST.fetch_max(now, Ordering::SeqCst).max(now);
        let stamp = if stamp == now { now } else { LAST.fetch_add(1, Ordering::SeqCst) + 1 };
        ctx.write_value(&format!("data/clock/{}", ctx.invoker().to_hex()), &Value::Int(stamp as i64))?;
        Ok(Value::Null)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct NetworkConfig {
    pub peer_count: usize,
    /// Defaults to a majority of `peer_count`.
    pub quorum_k: Option<usize>,
    pub batch_size: usize,
    pub ledger_mode: LedgerMode,
    /// Enables fault injection and test-only contracts.
    pub test_mode: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig { peer_count: 4, quorum_k: None, batch_size: 10, ledger_mode: LedgerMode::Chain, test_mode: false }
    }
}

impl NetworkConfig {
    pub fn quorum(&self) -> usize {
        self.quorum_k.unwrap_or(self.peer_count / 2 + 1)
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let k = self.quorum();
        if self.peer_count == 0 || k == 0 || k > self.peer_count || self.batch_size == 0 {
            return Err(NetError::BadConfig(format!(
                "peerCount {}, quorumK {k}, batchSize {}",
                self.peer_count, self.batch_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct DivergenceFault {
    pub peer: String,
    pub height: Option<u64>,
    pub expected_root: Hash,
    pub actual_root: Hash,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NetError {
    #[error("invalid network configuration: {0}")]
    BadConfig(String),
    #[error("run halted: peer {} diverged", .0.peer)]
    Halted(DivergenceFault),
    #[error("ledger: {0}")]
    Ledger(String),
    #[error("fault injection requires test mode")]
    TestModeRequired,
    #[error("unknown peer `{0}`")]
    UnknownPeer(String),
    #[error("no block at height {0}")]
    UnknownHeight(u64),
    #[error("sibling blocks need dag mode, a single tip and at least two pending requests")]
    SiblingsUnavailable,
}

impl From<LedgerError> for NetError {
    fn from(e: LedgerError) -> Self {
        NetError::Ledger(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase", tag = "reason")]
pub enum RejectReason {
    Divergence { decision: EndorsementDecision },
    UnknownIdentity { detail: String },
    Signature { detail: String },
    Dispatch { detail: String },
    InvalidArgs { detail: String },
    DuplicateRequest,
    Halted,
}

impl RejectReason {
    pub fn label(&self) -> &'static str {
        match self {
            RejectReason::Divergence { .. } => "divergence",
            RejectReason::UnknownIdentity { .. } => "unknownIdentity",
            RejectReason::Signature { .. } => "signature",
            RejectReason::Dispatch { .. } => "dispatch",
            RejectReason::InvalidArgs { .. } => "invalidArgs",
            RejectReason::DuplicateRequest => "duplicateRequest",
            RejectReason::Halted => "halted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase", tag = "status")]
pub enum Submission {
    Accepted { request_id: Hash },
    Rejected(RejectReason),
}

impl Submission {
    pub fn is_accepted(&self) -> bool {
        matches!(self, Submission::Accepted { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Fault {
    /// XOR 0xff into byte `byte_offset` of the block body at `height`.
    TamperBlock { height: u64, byte_offset: usize },
    CorruptPeerState { peer: String, key: String },
}

/// A state replica that applies blocks in arrival order and keeps its full
/// state equal to the linearized execution of every block it holds.
#[derive(Debug, Clone)]
pub struct Replica {
    mode: LedgerMode,
    full: WorldState,
    blocks: Vec<Block>,
    applied: BTreeSet<usize>,
    index_of: HashMap<Hash, usize>,
    /// Dag mode: state after each block's ancestor closure plus the block.
    post: HashMap<Hash, WorldState>,
}

impl Replica {
    pub fn new(engine: &Engine, mode: LedgerMode) -> Replica {
        Replica {
            mode,
            full: engine.empty_state(),
            blocks: Vec::new(),
            applied: BTreeSet::new(),
            index_of: HashMap::new(),
            post: HashMap::new(),
        }
    }

    pub fn state(&self) -> &WorldState {
        &self.full
    }

    pub fn root(&self) -> Hash {
        self.full.root()
    }

    pub fn heights(&self) -> usize {
        self.blocks.len()
    }

    /// State a new block with these parents executes against.
    pub fn start_state(&self, engine: &Engine, parents: &[Hash]) -> Result<WorldState, LedgerError> {
        if self.mode == LedgerMode::Chain || parents.is_empty() {
            return Ok(if parents.is_empty() { engine.empty_state() } else { self.full.clone() });
        }
        let mut closure = BTreeSet::new();
        for p in parents {
            let &i = self
                .index_of
                .get(p)
                .ok_or_else(|| LedgerError::DagStructure(format!("unknown parent {p}")))?;
            closure.insert(i);
            closure.extend(ledger::ancestors(&self.blocks, i)?);
        }
        if closure == self.applied {
            return Ok(self.full.clone());
        }
        if let [p] = parents {
            if let Some(s) = self.post.get(p) {
                return Ok(s.clone());
            }
        }
        let order = ledger::linearize(&self.blocks)?;
        Ok(engine.state_of(&self.blocks, &order, &closure))
    }

    /// Executes `block` and returns the state root it produced, without
    /// checking it against the recorded one.
    pub fn apply(&mut self, engine: &Engine, block: &Block) -> Result<Hash, LedgerError> {
        let start = self.start_state(engine, &block.parent_hashes)?;
        let linear = self.mode == LedgerMode::Chain || {
            // covers everything applied so far, so `start` is `full`
            let mut closure = BTreeSet::new();
            for p in &block.parent_hashes {
                if let Some(&i) = self.index_of.get(p) {
                    closure.insert(i);
                    closure.extend(ledger::ancestors(&self.blocks, i)?);
                }
            }
            closure == self.applied
        };
        let next = engine.apply_block(&start, block);
        let root = next.root();
        let index = self.blocks.len();
        self.blocks.push(block.clone());
        self.index_of.insert(block.block_hash, index);
        self.applied.insert(index);
        if self.mode == LedgerMode::Dag {
            self.post.insert(block.block_hash, next.clone());
        }
        self.full = if linear {
            next
        } else {
            let order = ledger::linearize(&self.blocks)?;
            engine.state_of(&self.blocks, &order, &self.applied)
        };
        Ok(root)
    }

    pub(crate) fn corrupt(&mut self, key: &str) {
        self.full.corrupt(key);
        for s in self.post.values_mut() {
            s.corrupt(key);
        }
    }
}

#[derive(Debug, Clone)]
pub struct Peer {
    pub id: String,
    pub replica: Replica,
}

/// What one cut produced.
#[derive(Debug, Clone)]
pub struct BlockOutcome {
    pub height: u64,
    pub block_hash: Hash,
    pub receipts: Vec<CommitReceipt>,
}

pub struct Network {
    config: NetworkConfig,
    engine: Engine,
    authority: KeyPair,
    orderer: Replica,
    peers: Vec<Peer>,
    ledger: LedgerFile,
    pending: VecDeque<TxRequest>,
    seen: HashSet<Hash>,
    receipts: Vec<CommitReceipt>,
    events: Vec<Event>,
    halted: Option<DivergenceFault>,
}

impl std::fmt::Debug for Network {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Network")
            .field("config", &self.config)
            .field("blocks", &self.ledger.len())
            .field("pending", &self.pending.len())
            .finish_non_exhaustive()
    }
}

/// Arguments of the authority's genesis self-registration.
pub fn bootstrap_request(authority: &KeyPair) -> TxRequest {
    let credential = authority.sign(&Identity::credential_body(&authority.id(), Role::Authority));
    let args = policy::registration_args(authority.public(), Role::Authority, None, "authority", &credential);
    TxRequest::new(authority, policy::IDENTITY, "bootstrap", &args, 0).expect("small request")
}

impl Network {
    /// Starts a network over `ledger` (normally empty, possibly file-backed)
    /// and writes the genesis block.
    pub fn new(config: NetworkConfig, authority: KeyPair, ledger: LedgerFile) -> Result<Network, NetError> {
        Network::with_contracts(config, authority, ledger, builtin_contracts())
    }

    pub fn with_contracts(
        config: NetworkConfig,
        authority: KeyPair,
        ledger: LedgerFile,
        mut contracts: ContractRegistry,
    ) -> Result<Network, NetError> {
        config.validate()?;
        if ledger.mode() != config.ledger_mode || !ledger.is_empty() {
            return Err(NetError::BadConfig("network needs an empty ledger in the configured mode".into()));
        }
        if config.test_mode {
            contracts.register(wall_clock_contract());
        }
        let engine = Engine::new(contracts, authority.id(), authority.public());
        let peers = (0..config.peer_count)
            .map(|i| Peer { id: format!("peer-{i}"), replica: Replica::new(&engine, config.ledger_mode) })
            .collect();
        let mut net = Network {
            config,
            orderer: Replica::new(&engine, config.ledger_mode),
            engine,
            authority,
            peers,
            ledger,
            pending: VecDeque::new(),
            seen: HashSet::new(),
            receipts: Vec::new(),
            events: Vec::new(),
            halted: None,
        };
        let genesis = bootstrap_request(&net.authority);
        net.seen.insert(genesis.request_id());
        net.pending.push_back(genesis);
        net.cut_block()?;
        Ok(net)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn authority(&self) -> &KeyPair {
        &self.authority
    }

    pub fn ledger(&self) -> &LedgerFile {
        &self.ledger
    }

    pub fn state(&self) -> &WorldState {
        self.orderer.state()
    }

    pub fn peers(&self) -> &[Peer] {
        &self.peers
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    pub fn receipts(&self) -> &[CommitReceipt] {
        &self.receipts
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn halted(&self) -> Option<&DivergenceFault> {
        self.halted.as_ref()
    }

    fn halt(&mut self, fault: DivergenceFault) -> NetError {
        self.halted = Some(fault.clone());
        NetError::Halted(fault)
    }

    /// First peer whose replica disagrees with the orderer.
    fn divergent_peer(&self) -> Option<DivergenceFault> {
        let expected = self.orderer.root();
        self.peers.iter().find_map(|p| {
            let actual = p.replica.root();
            (actual != expected).then(|| DivergenceFault {
                peer: p.id.clone(),
                height: None,
                expected_root: expected,
                actual_root: actual,
            })
        })
    }

    /// Endorses on every peer; accepted requests queue for ordering.
    pub fn submit(&mut self, req: TxRequest) -> Result<Submission, NetError> {
        if let Some(f) = &self.halted {
            return Err(NetError::Halted(f.clone()));
        }
        if let Some(fault) = self.divergent_peer() {
            return Err(self.halt(fault));
        }
        let id = req.request_id();
        if self.seen.contains(&id) {
            return Ok(Submission::Rejected(RejectReason::DuplicateRequest));
        }
        let snapshots: Vec<&WorldState> = self.peers.iter().map(|p| p.replica.state()).collect();
        let decision = match self.engine.endorse(&req, &snapshots, self.config.quorum()) {
            Ok(d) => d,
            Err(e) => {
                let detail = e.to_string();
                return Ok(Submission::Rejected(match e {
                    EngineError::UnknownIdentity(_) | EngineError::BadCredential(_) => {
                        RejectReason::UnknownIdentity { detail }
                    }
                    EngineError::BadSignature(_) => RejectReason::Signature { detail },
                    EngineError::UnknownContract(_) | EngineError::UnknownOperation { .. } => {
                        RejectReason::Dispatch { detail }
                    }
                    EngineError::BadArgs(_) => RejectReason::InvalidArgs { detail },
                    EngineError::StateDivergence { .. } | EngineError::BadQuorum { .. } => {
                        unreachable!("roots checked and quorum validated above")
                    }
                }));
            }
        };
        if !decision.accepted {
            return Ok(Submission::Rejected(RejectReason::Divergence { decision }));
        }
        self.seen.insert(id);
        self.pending.push_back(req);
        Ok(Submission::Accepted { request_id: id })
    }

    /// Evaluates a request against the orderer's current state without
    /// ordering or recording it.
    pub fn query(&self, req: &TxRequest) -> Result<ExecutionResult, EngineError> {
        self.engine.execute_transaction(self.orderer.state(), req)
    }

    fn take_batch(&mut self, n: usize) -> Vec<TxRequest> {
        let n = n.min(self.pending.len());
        self.pending.drain(..n).collect()
    }

    fn next_seq(&self) -> u64 {
        self.ledger.last_seq().map_or(0, |s| s + 1)
    }

    /// Orders up to `batchSize` pending requests into one block, applies it on
    /// every peer and checks each peer's root. `None` when nothing is pending.
    pub fn cut_block(&mut self) -> Result<Option<BlockOutcome>, NetError> {
        if let Some(f) = &self.halted {
            return Err(NetError::Halted(f.clone()));
        }
        if self.pending.is_empty() {
            return Ok(None);
        }
        let batch = self.take_batch(self.config.batch_size);
        let parents = match self.config.ledger_mode {
            LedgerMode::Chain => self.ledger.blocks().last().map(|b| vec![b.block_hash]).unwrap_or_default(),
            LedgerMode::Dag => self.ledger.tips(),
        };
        let start = self.orderer.start_state(&self.engine, &parents)?;
        let (next, receipts) = self.engine.execute_block(&start, &batch, self.next_seq());
        let txs = receipts.iter().map(|r| r.tx.clone()).collect();
        let block = self.ledger.append_block(txs, next.root(), &self.authority)?.clone();
        self.distribute(&block)?;
        Ok(Some(self.record(block, receipts)))
    }

    /// Dag mode: orders the pending queue into two sibling blocks on the
    /// single current tip. The next ordinary cut merges them.
    pub fn cut_sibling_blocks(&mut self) -> Result<(BlockOutcome, BlockOutcome), NetError> {
        if let Some(f) = &self.halted {
            return Err(NetError::Halted(f.clone()));
        }
        let tips = self.ledger.tips();
        if self.config.ledger_mode != LedgerMode::Dag || tips.len() != 1 || self.pending.len() < 2 {
            return Err(NetError::SiblingsUnavailable);
        }
        let total = self.pending.len().min(2 * self.config.batch_size);
        let left = self.take_batch(total / 2);
        let right = self.take_batch(total - total / 2);
        let start = self.orderer.start_state(&self.engine, &tips)?;
        let mut out = Vec::with_capacity(2);
        for batch in [left, right] {
            let (next, receipts) = self.engine.execute_block(&start, &batch, self.next_seq());
            let txs = receipts.iter().map(|r| r.tx.clone()).collect();
            let block = self.ledger.append_block_on(tips.clone(), txs, next.root(), &self.authority)?.clone();
            self.distribute(&block)?;
            out.push(self.record(block, receipts));
        }
        let right = out.pop().expect("two blocks");
        let left = out.pop().expect("two blocks");
        Ok((left, right))
    }

    fn record(&mut self, block: Block, receipts: Vec<CommitReceipt>) -> BlockOutcome {
        for r in &receipts {
            self.events.extend(r.events.iter().cloned());
        }
        self.receipts.extend(receipts.iter().cloned());
        BlockOutcome { height: block.height, block_hash: block.block_hash, receipts }
    }

    /// Applies a freshly signed block on the orderer and every peer. Any
    /// replica whose root differs from the recorded one halts the run.
    fn distribute(&mut self, block: &Block) -> Result<(), NetError> {
        let root = self.orderer.apply(&self.engine, block)?;
        debug_assert_eq!(root, block.state_root);
        let engine = &self.engine;
        let results: Vec<Result<Hash, LedgerError>> =
            self.peers.par_iter_mut().map(|p| p.replica.apply(engine, block)).collect();
        let expected_full = self.orderer.root();
        for (peer, result) in self.peers.iter().zip(results) {
            let actual = result?;
            let full = peer.replica.root();
            if actual != block.state_root || full != expected_full {
                let fault = DivergenceFault {
                    peer: peer.id.clone(),
                    height: Some(block.height),
                    expected_root: block.state_root,
                    actual_root: if actual != block.state_root { actual } else { full },
                };
                return Err(self.halt(fault));
            }
        }
        Ok(())
    }

    /// Cuts until the queue is empty; returns the blocks produced.
    pub fn drain(&mut self) -> Result<Vec<BlockOutcome>, NetError> {
        let mut out = Vec::new();
        while let Some(b) = self.cut_block()? {
            out.push(b);
        }
        Ok(out)
    }

    pub fn inject_fault(&mut self, fault: Fault) -> Result<(), NetError> {
        if !self.config.test_mode {
            return Err(NetError::TestModeRequired);
        }
        match fault {
            Fault::TamperBlock { height, byte_offset } => {
                let index = self
                    .ledger
                    .blocks()
                    .iter()
                    .position(|b| b.height == height)
                    .ok_or(NetError::UnknownHeight(height))?;
                let pos = self.ledger.record_body_offset(index).ok_or(NetError::UnknownHeight(height))? + byte_offset;
                if !self.ledger.flip_image_byte(pos) {
                    return Err(NetError::Ledger(format!("offset {byte_offset} is past the end of the ledger")));
                }
            }
            Fault::CorruptPeerState { peer, key } => {
                let p = self.peers.iter_mut().find(|p| p.id == peer).ok_or(NetError::UnknownPeer(peer))?;
                p.replica.corrupt(&key);
            }
        }
        Ok(())
    }

    /// Verifies the ledger file image as written (including any tampering).
    pub fn verify(&self) -> Result<VerificationReport, NetError> {
        let raw = RawLedger::split(self.ledger.to_bytes())?;
        let registry = KeyRegistry::from_blocks(raw.blocks());
        Ok(ledger::verify_raw(&raw, &registry))
    }
}
