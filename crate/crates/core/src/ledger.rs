//! Hash-linked, authority-signed block history and its on-disk format.
//!
//! File layout: `b"EGSL"`, one mode byte (0x01 chain, 0x02 dag), then
//! repeated records of a 4-byte big-endian length followed by the canonical
//! encoding of one block.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::cmp::Reverse;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{CodecError, Fields, Value};
use crate::crypto::{Hash, IdentityId, KeyPair, PublicKey, Signature};
use crate::state::StateWrite;

pub const MAGIC: &[u8; 4] = b"EGSL";

#[derive(Debug, Error)]
pub enum LedgerError {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unknown ledger mode byte 0x{0:02x}")]
    BadMode(u8),
    #[error("file truncated at offset {0}")]
    Truncated(usize),
    #[error("record at offset {offset}: {source}")]
    Record { offset: usize, source: CodecError },
    #[error("ordering: {0}")]
    Ordering(String),
    #[error("corrupt ledger: {0}")]
    CorruptLedger(String),
    #[error("dag structure: {0}")]
    DagStructure(String),
    #[error("block must carry at least one transaction")]
    EmptyBlock,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum LedgerMode {
    Chain,
    Dag,
}

impl LedgerMode {
    pub fn flag(self) -> u8 {
        match self {
            LedgerMode::Chain => 0x01,
            LedgerMode::Dag => 0x02,
        }
    }

    pub fn from_flag(flag: u8) -> Result<LedgerMode, LedgerError> {
        match flag {
            0x01 => Ok(LedgerMode::Chain),
            0x02 => Ok(LedgerMode::Dag),
            other => Err(LedgerError::BadMode(other)),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LedgerMode::Chain => "chain",
            LedgerMode::Dag => "dag",
        }
    }
}

/// How a transaction ended once ordered.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "code", rename_all = "camelCase")]
pub enum TxOutcome {
    Success,
    /// Handler refused; the code names the reason (e.g. `permission`).
    Failed(String),
    /// Read set went stale before commit.
    Aborted,
}

impl TxOutcome {
    pub fn is_success(&self) -> bool {
        matches!(self, TxOutcome::Success)
    }

    pub fn label(&self) -> String {
        match self {
            TxOutcome::Success => "ok".into(),
            TxOutcome::Failed(code) => format!("error:{code}"),
            TxOutcome::Aborted => "aborted".into(),
        }
    }

    fn to_value(&self) -> Value {
        match self {
            TxOutcome::Success => Value::List(vec!["success".into()]),
            TxOutcome::Failed(code) => Value::List(vec!["failed".into(), code.as_str().into()]),
            TxOutcome::Aborted => Value::List(vec!["aborted".into()]),
        }
    }

    fn from_value(v: &Value) -> Result<TxOutcome, CodecError> {
        match v.as_list() {
            Some([Value::Str(s)]) if s == "success" => Ok(TxOutcome::Success),
            Some([Value::Str(s)]) if s == "aborted" => Ok(TxOutcome::Aborted),
            Some([Value::Str(s), Value::Str(code)]) if s == "failed" => {
                Ok(TxOutcome::Failed(code.clone()))
            }
            _ => Err(CodecError::Shape { field: "tx.outcome".into(), reason: "bad outcome".into() }),
        }
    }
}

/// A signed request to run one contract operation, before ordering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxRequest {
    pub invoker: IdentityId,
    pub contract: String,
    pub operation: String,
    /// Canonical encoding of the argument value.
    pub args: Vec<u8>,
    pub logical_time: u64,
    pub signature: Signature,
}

fn request_body(
    invoker: &IdentityId,
    contract: &str,
    operation: &str,
    args: &[u8],
    logical_time: u64,
) -> Vec<u8> {
    Value::map()
        .with("args", args.to_vec())
        .with("contract", contract)
        .with("invoker", *invoker)
        .with("logicalTime", logical_time as i64)
        .with("operation", operation)
        .build()
        .encode()
        .expect("request fits")
}

impl TxRequest {
    pub fn new(
        signer: &KeyPair,
        contract: &str,
        operation: &str,
        args: &Value,
        logical_time: u64,
    ) -> Result<TxRequest, CodecError> {
        let args = args.encode()?;
        let body = request_body(&signer.id(), contract, operation, &args, logical_time);
        Ok(TxRequest {
            invoker: signer.id(),
            contract: contract.to_owned(),
            operation: operation.to_owned(),
            signature: signer.sign(&body),
            args,
            logical_time,
        })
    }

    /// The bytes the invoker signs.
    pub fn signed_body(&self) -> Vec<u8> {
        request_body(&self.invoker, &self.contract, &self.operation, &self.args, self.logical_time)
    }

    /// Digest of the signed body; stable before and after ordering.
    pub fn request_id(&self) -> Hash {
        Hash::digest(&self.signed_body())
    }

    pub fn verify_signature(&self, key: &PublicKey) -> bool {
        self.signature.signer == self.invoker && self.signature.verify(key, &self.signed_body())
    }

    pub fn args_value(&self) -> Result<Value, CodecError> {
        Value::decode(&self.args)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transaction {
    pub tx_id: Hash,
    pub seq_no: u64,
    pub logical_time: u64,
    pub invoker: IdentityId,
    pub contract: String,
    pub operation: String,
    pub args: Vec<u8>,
    /// Sorted by key, no duplicates.
    pub read_set: Vec<(String, u64)>,
    /// Sorted by key, no duplicates. Empty unless the outcome is success.
    pub write_set: Vec<StateWrite>,
    pub outcome: TxOutcome,
    pub signature: Signature,
}

impl Transaction {
    /// Binds an ordered, executed request into a ledger transaction.
    pub fn from_request(
        req: &TxRequest,
        seq_no: u64,
        read_set: Vec<(String, u64)>,
        write_set: Vec<StateWrite>,
        outcome: TxOutcome,
    ) -> Transaction {
        let mut tx = Transaction {
            tx_id: Hash::ZERO,
            seq_no,
            logical_time: req.logical_time,
            invoker: req.invoker,
            contract: req.contract.clone(),
            operation: req.operation.clone(),
            args: req.args.clone(),
            read_set,
            write_set,
            outcome,
            signature: req.signature,
        };
        tx.tx_id = tx.compute_id();
        tx
    }

    pub fn request(&self) -> TxRequest {
        TxRequest {
            invoker: self.invoker,
            contract: self.contract.clone(),
            operation: self.operation.clone(),
            args: self.args.clone(),
            logical_time: self.logical_time,
            signature: self.signature,
        }
    }

    fn body_value(&self) -> Value {
        let reads = self
            .read_set
            .iter()
            .map(|(k, v)| Value::List(vec![k.as_str().into(), Value::Int(*v as i64)]))
            .collect::<Vec<_>>();
        let writes = self.write_set.iter().map(StateWrite::to_value).collect::<Vec<_>>();
        Value::map()
            .with("args", self.args.clone())
            .with("contract", self.contract.as_str())
            .with("invoker", self.invoker)
            .with("logicalTime", self.logical_time as i64)
            .with("operation", self.operation.as_str())
            .with("outcome", self.outcome.to_value())
            .with("readSet", reads)
            .with("seqNo", self.seq_no as i64)
            .with("writeSet", writes)
            .build()
    }

    /// SHA-256 of the canonical encoding of every field but id and signature.
    pub fn compute_id(&self) -> Hash {
        Hash::of_value(&self.body_value()).expect("transaction fits")
    }

    pub fn to_value(&self) -> Value {
        let Value::Map(mut m) = self.body_value() else { unreachable!() };
        m.insert("signature".into(), self.signature.to_value());
        m.insert("txId".into(), self.tx_id.into());
        Value::Map(m)
    }

    pub fn from_value(value: &Value) -> Result<Transaction, CodecError> {
        let f = Fields::new(value, "tx")?.exact(&[
            "args",
            "contract",
            "invoker",
            "logicalTime",
            "operation",
            "outcome",
            "readSet",
            "seqNo",
            "signature",
            "txId",
            "writeSet",
        ])?;
        let read_set = f
            .list("readSet")?
            .iter()
            .map(|item| match item.as_list() {
                Some([Value::Str(k), Value::Int(v)]) if *v >= 0 => Ok((k.clone(), *v as u64)),
                _ => Err(CodecError::Shape { field: "tx.readSet".into(), reason: "bad entry".into() }),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let write_set = f
            .list("writeSet")?
            .iter()
            .map(StateWrite::from_value)
            .collect::<Result<Vec<_>, _>>()?;
        let sorted = |keys: Vec<&String>| keys.windows(2).all(|w| w[0].as_bytes() < w[1].as_bytes());
        if !sorted(read_set.iter().map(|(k, _)| k).collect())
            || !sorted(write_set.iter().map(|w| &w.key).collect())
        {
            return Err(CodecError::Shape {
                field: "tx.readSet/writeSet".into(),
                reason: "keys must be strictly ascending".into(),
            });
        }
        Ok(Transaction {
            tx_id: Hash(f.array("txId")?),
            seq_no: f.uint("seqNo")?,
            logical_time: f.uint("logicalTime")?,
            invoker: IdentityId(Hash(f.array("invoker")?)),
            contract: f.str("contract")?.to_owned(),
            operation: f.str("operation")?.to_owned(),
            args: f.bytes("args")?.to_vec(),
            read_set,
            write_set,
            outcome: TxOutcome::from_value(f.get("outcome")?)?,
            signature: Signature::from_value(f.get("signature")?)?,
        })
    }

    pub fn args_value(&self) -> Result<Value, CodecError> {
        Value::decode(&self.args)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub height: u64,
    pub parent_hashes: Vec<Hash>,
    pub transactions: Vec<Transaction>,
    pub state_root: Hash,
    pub block_hash: Hash,
    pub authority_signature: Signature,
}

impl Block {
    pub fn compute_hash(height: u64, parents: &[Hash], tx_ids: &[Hash], state_root: &Hash) -> Hash {
        let v = Value::map()
            .with("height", height as i64)
            .with("parentHashes", parents.iter().map(|h| Value::from(*h)).collect::<Vec<_>>())
            .with("stateRoot", *state_root)
            .with("txIds", tx_ids.iter().map(|h| Value::from(*h)).collect::<Vec<_>>())
            .build();
        Hash::of_value(&v).expect("header fits")
    }

    pub fn recompute_hash(&self) -> Hash {
        let ids: Vec<Hash> = self.transactions.iter().map(|t| t.tx_id).collect();
        Block::compute_hash(self.height, &self.parent_hashes, &ids, &self.state_root)
    }

    /// What the authority signs: the block hash bound to the ledger mode.
    pub fn signing_body(block_hash: &Hash, mode: LedgerMode) -> Vec<u8> {
        Value::map()
            .with("blockHash", *block_hash)
            .with("mode", mode.as_str())
            .build()
            .encode()
            .expect("small value")
    }

    pub fn first_seq(&self) -> Option<u64> {
        self.transactions.first().map(|t| t.seq_no)
    }

    pub fn last_seq(&self) -> Option<u64> {
        self.transactions.last().map(|t| t.seq_no)
    }

    pub fn to_value(&self) -> Value {
        Value::map()
            .with("authoritySignature", self.authority_signature.to_value())
            .with("blockHash", self.block_hash)
            .with("height", self.height as i64)
            .with("parentHashes", self.parent_hashes.iter().map(|h| Value::from(*h)).collect::<Vec<_>>())
            .with("stateRoot", self.state_root)
            .with("transactions", self.transactions.iter().map(Transaction::to_value).collect::<Vec<_>>())
            .build()
    }

    pub fn from_value(value: &Value) -> Result<Block, CodecError> {
        let f = Fields::new(value, "block")?.exact(&[
            "authoritySignature",
            "blockHash",
            "height",
            "parentHashes",
            "stateRoot",
            "transactions",
        ])?;
        let parent_hashes = f
            .list("parentHashes")?
            .iter()
            .map(|v| match v.as_bytes() {
                Some(b) if b.len() == 32 => Ok(Hash(b.try_into().expect("32"))),
                _ => Err(CodecError::Shape { field: "block.parentHashes".into(), reason: "32 bytes".into() }),
            })
            .collect::<Result<_, _>>()?;
        Ok(Block {
            height: f.uint("height")?,
            parent_hashes,
            transactions: f
                .list("transactions")?
                .iter()
                .map(Transaction::from_value)
                .collect::<Result<_, _>>()?,
            state_root: Hash(f.array("stateRoot")?),
            block_hash: Hash(f.array("blockHash")?),
            authority_signature: Signature::from_value(f.get("authoritySignature")?)?,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        self.to_value().encode().expect("block fits")
    }

    pub fn decode(bytes: &[u8]) -> Result<Block, CodecError> {
        Block::from_value(&Value::decode(bytes)?)
    }
}

/// In-memory ledger plus its exact file image. Optionally mirrored to disk,
/// where every append writes only the new record.
#[derive(Debug)]
pub struct LedgerFile {
    mode: LedgerMode,
    blocks: Vec<Block>,
    image: Vec<u8>,
    sink: Option<PathBuf>,
}

impl Clone for LedgerFile {
    fn clone(&self) -> Self {
        LedgerFile { mode: self.mode, blocks: self.blocks.clone(), image: self.image.clone(), sink: None }
    }
}

impl LedgerFile {
    pub fn new(mode: LedgerMode) -> LedgerFile {
        let mut image = MAGIC.to_vec();
        image.push(mode.flag());
        LedgerFile { mode, blocks: Vec::new(), image, sink: None }
    }

    /// Creates `path` with the file header and mirrors later appends into it.
    pub fn create(mode: LedgerMode, path: &Path) -> Result<LedgerFile, LedgerError> {
        let mut ledger = LedgerFile::new(mode);
        std::fs::write(path, &ledger.image)?;
        ledger.sink = Some(path.to_owned());
        Ok(ledger)
    }

    pub fn mode(&self) -> LedgerMode {
        self.mode
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn to_bytes(&self) -> &[u8] {
        &self.image
    }

    pub fn transactions(&self) -> impl Iterator<Item = &Transaction> {
        self.blocks.iter().flat_map(|b| b.transactions.iter())
    }

    pub fn last_seq(&self) -> Option<u64> {
        self.blocks.iter().rev().find_map(Block::last_seq)
    }

    /// Blocks no other block names as a parent, ascending by hash.
    pub fn tips(&self) -> Vec<Hash> {
        let referenced: BTreeSet<Hash> =
            self.blocks.iter().flat_map(|b| b.parent_hashes.iter().copied()).collect();
        let mut tips: Vec<Hash> =
            self.blocks.iter().map(|b| b.block_hash).filter(|h| !referenced.contains(h)).collect();
        tips.sort();
        tips
    }

    pub fn block_by_hash(&self, hash: &Hash) -> Option<&Block> {
        self.blocks.iter().find(|b| b.block_hash == *hash)
    }

    pub fn parse(bytes: &[u8]) -> Result<LedgerFile, LedgerError> {
        let raw = RawLedger::split(bytes)?;
        let mut blocks = Vec::with_capacity(raw.records.len());
        for rec in raw.records {
            blocks.push(rec.block.map_err(|source| LedgerError::Record { offset: rec.offset, source })?);
        }
        Ok(LedgerFile { mode: raw.mode, blocks, image: bytes.to_vec(), sink: None })
    }

    /// Flips every bit of one byte of the file image, leaving the decoded
    /// blocks untouched. Fault injection only.
    pub(crate) fn flip_image_byte(&mut self, pos: usize) -> bool {
        match self.image.get_mut(pos) {
            Some(b) => {
                *b ^= 0xff;
                true
            }
            None => false,
        }
    }

    /// File offset of the body of record `index` (just past its length prefix).
    pub fn record_body_offset(&self, index: usize) -> Option<usize> {
        let mut pos = 5;
        for i in 0..=index {
            let len = u32::from_be_bytes(self.image.get(pos..pos + 4)?.try_into().ok()?) as usize;
            if i == index {
                return Some(pos + 4);
            }
            pos += 4 + len;
        }
        None
    }

    pub fn read(path: &Path) -> Result<LedgerFile, LedgerError> {
        LedgerFile::parse(&std::fs::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), LedgerError> {
        std::fs::write(path, &self.image)?;
        Ok(())
    }

    fn check_tip(&self, authority: &KeyPair) -> Result<(), LedgerError> {
        let Some(tip) = self.blocks.last() else { return Ok(()) };
        if tip.recompute_hash() != tip.block_hash
            || tip.authority_signature.signer != authority.id()
            || !tip
                .authority_signature
                .verify(&authority.public(), &Block::signing_body(&tip.block_hash, self.mode))
        {
            return Err(LedgerError::CorruptLedger(format!("tip at height {} does not verify", tip.height)));
        }
        Ok(())
    }

    fn check_seq(&self, txs: &[Transaction]) -> Result<(), LedgerError> {
        let mut expected = self.last_seq().map_or(0, |s| s + 1);
        for tx in txs {
            if tx.seq_no != expected {
                return Err(LedgerError::Ordering(format!(
                    "expected seqNo {expected}, found {}",
                    tx.seq_no
                )));
            }
            expected += 1;
        }
        Ok(())
    }

    /// Appends a block on top of the current tips (one tip in chain mode, at
    /// most two in dag mode).
    pub fn append_block(
        &mut self,
        txs: Vec<Transaction>,
        state_root: Hash,
        authority: &KeyPair,
    ) -> Result<&Block, LedgerError> {
        let parents = match self.mode {
            LedgerMode::Chain => self.blocks.last().map(|b| vec![b.block_hash]).unwrap_or_default(),
            LedgerMode::Dag => {
                let tips = self.tips();
                if tips.len() > 2 {
                    return Err(LedgerError::DagStructure(format!("{} open tips, at most 2 may merge", tips.len())));
                }
                tips
            }
        };
        self.append_with_parents(parents, txs, state_root, authority)
    }

    /// Dag mode only: appends with explicit parents, which lets two sibling
    /// blocks share a parent.
    pub fn append_block_on(
        &mut self,
        parents: Vec<Hash>,
        txs: Vec<Transaction>,
        state_root: Hash,
        authority: &KeyPair,
    ) -> Result<&Block, LedgerError> {
        if self.mode != LedgerMode::Dag {
            return Err(LedgerError::DagStructure("explicit parents require dag mode".into()));
        }
        if parents.is_empty() || parents.len() > 2 {
            return Err(LedgerError::DagStructure(format!("{} parents, expected 1 or 2", parents.len())));
        }
        if let Some(missing) = parents.iter().find(|p| self.block_by_hash(p).is_none()) {
            return Err(LedgerError::DagStructure(format!("unknown parent {missing}")));
        }
        self.append_with_parents(parents, txs, state_root, authority)
    }

    fn append_with_parents(
        &mut self,
        mut parents: Vec<Hash>,
        txs: Vec<Transaction>,
        state_root: Hash,
        authority: &KeyPair,
    ) -> Result<&Block, LedgerError> {
        if txs.is_empty() {
            return Err(LedgerError::EmptyBlock);
        }
        self.check_tip(authority)?;
        self.check_seq(&txs)?;
        parents.sort();
        parents.dedup();
        let height = parents
            .iter()
            .filter_map(|p| self.block_by_hash(p))
            .map(|b| b.height + 1)
            .max()
            .unwrap_or(0);
        let ids: Vec<Hash> = txs.iter().map(|t| t.tx_id).collect();
        let block_hash = Block::compute_hash(height, &parents, &ids, &state_root);
        let block = Block {
            height,
            parent_hashes: parents,
            transactions: txs,
            state_root,
            block_hash,
            authority_signature: authority.sign(&Block::signing_body(&block_hash, self.mode)),
        };
        let body = block.encode();
        let mut record = Vec::with_capacity(body.len() + 4);
        record.extend_from_slice(&(body.len() as u32).to_be_bytes());
        record.extend_from_slice(&body);
        if let Some(path) = &self.sink {
            let mut f: File = OpenOptions::new().append(true).open(path)?;
            f.write_all(&record)?;
        }
        self.image.extend_from_slice(&record);
        self.blocks.push(block);
        Ok(self.blocks.last().expect("just pushed"))
    }
}

/// One length-prefixed record, decoded if possible.
#[derive(Debug, Clone)]
pub struct RawRecord {
    pub offset: usize,
    pub block: Result<Block, CodecError>,
}

/// A ledger file split into records without requiring every record to
/// decode. Only framing problems (magic, mode, lengths) are errors here.
#[derive(Debug, Clone)]
pub struct RawLedger {
    pub mode: LedgerMode,
    pub records: Vec<RawRecord>,
}

impl RawLedger {
    pub fn split(bytes: &[u8]) -> Result<RawLedger, LedgerError> {
        if bytes.len() < 5 {
            return Err(if bytes.len() >= 4 && &bytes[..4] != MAGIC {
                LedgerError::BadMagic
            } else {
                LedgerError::Truncated(bytes.len())
            });
        }
        if &bytes[..4] != MAGIC {
            return Err(LedgerError::BadMagic);
        }
        let mode = LedgerMode::from_flag(bytes[4])?;
        let mut pos = 5;
        let mut records = Vec::new();
        while pos < bytes.len() {
            if bytes.len() - pos < 4 {
                return Err(LedgerError::Truncated(pos));
            }
            let len = u32::from_be_bytes(bytes[pos..pos + 4].try_into().expect("4")) as usize;
            let start = pos + 4;
            let end = start.checked_add(len).filter(|&e| e <= bytes.len()).ok_or(LedgerError::Truncated(pos))?;
            records.push(RawRecord { offset: pos, block: Block::decode(&bytes[start..end]) });
            pos = end;
        }
        Ok(RawLedger { mode, records })
    }

    pub fn blocks(&self) -> impl Iterator<Item = &Block> {
        self.records.iter().filter_map(|r| r.block.as_ref().ok())
    }
}

/// Public keys used for verification, plus which identity is the authority.
#[derive(Debug, Clone, Default)]
pub struct KeyRegistry {
    pub authority: Option<IdentityId>,
    pub keys: BTreeMap<IdentityId, PublicKey>,
}

impl KeyRegistry {
    pub fn new(authority: IdentityId, authority_key: PublicKey) -> KeyRegistry {
        let mut keys = BTreeMap::new();
        keys.insert(authority, authority_key);
        KeyRegistry { authority: Some(authority), keys }
    }

    pub fn insert(&mut self, id: IdentityId, key: PublicKey) {
        self.keys.insert(id, key);
    }

    /// Keys as registered on the ledger itself: the genesis transaction's
    /// invoker is the authority, and every successful `identity` transaction
    /// contributes the `publicKey` it registered.
    pub fn from_blocks<'a>(blocks: impl IntoIterator<Item = &'a Block>) -> KeyRegistry {
        let mut reg = KeyRegistry::default();
        for block in blocks {
            for tx in &block.transactions {
                if tx.contract != "identity" || !tx.outcome.is_success() {
                    continue;
                }
                let Some(key) = tx
                    .args_value()
                    .ok()
                    .and_then(|a| a.get("publicKey").and_then(|k| k.as_bytes()).map(<[u8]>::to_vec))
                    .and_then(|b| <[u8; 32]>::try_from(b.as_slice()).ok())
                    .map(PublicKey)
                else {
                    continue;
                };
                let id = IdentityId::of_key(&key);
                if tx.operation == "bootstrap" && block.parent_hashes.is_empty() && id == tx.invoker {
                    reg.authority = Some(id);
                }
                reg.keys.insert(id, key);
            }
        }
        reg
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct BlockCheck {
    pub index: usize,
    pub height: u64,
    pub block_hash: Hash,
    pub hash_link_ok: bool,
    pub signature_ok: bool,
    pub seq_ok: bool,
    pub problems: Vec<String>,
}

impl BlockCheck {
    pub fn ok(&self) -> bool {
        self.hash_link_ok && self.signature_ok && self.seq_ok
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct VerificationReport {
    pub valid: bool,
    pub blocks: Vec<BlockCheck>,
}

impl VerificationReport {
    pub fn first_invalid(&self) -> Option<&BlockCheck> {
        self.blocks.iter().find(|b| !b.ok())
    }
}

/// Checks hash links, signatures and sequence contiguity of every block.
/// Failures are collected, never returned as errors.
pub fn verify_ledger(ledger: &LedgerFile, registry: &KeyRegistry) -> VerificationReport {
    let blocks: Vec<Option<&Block>> = ledger.blocks.iter().map(Some).collect();
    verify_blocks(ledger.mode, &blocks, registry)
}

/// Like [`verify_ledger`], but undecodable records are reported as invalid
/// blocks at their position instead of failing the whole file.
pub fn verify_raw(raw: &RawLedger, registry: &KeyRegistry) -> VerificationReport {
    let blocks: Vec<Option<&Block>> = raw.records.iter().map(|r| r.block.as_ref().ok()).collect();
    let mut report = verify_blocks(raw.mode, &blocks, registry);
    for (check, rec) in report.blocks.iter_mut().zip(&raw.records) {
        if let Err(e) = &rec.block {
            check.problems.push(format!("record at offset {} does not decode: {e}", rec.offset));
        }
    }
    report
}

fn undecodable(index: usize) -> BlockCheck {
    BlockCheck {
        index,
        height: 0,
        block_hash: Hash::ZERO,
        hash_link_ok: false,
        signature_ok: false,
        seq_ok: false,
        problems: Vec::new(),
    }
}

fn verify_blocks(mode: LedgerMode, blocks: &[Option<&Block>], registry: &KeyRegistry) -> VerificationReport {
    let mut seen: HashMap<Hash, u64> = HashMap::new();
    // unknown after an undecodable record
    let mut next_seq = Some(0u64);
    let mut checks = Vec::with_capacity(blocks.len());

    for (index, block) in blocks.iter().enumerate() {
        let Some(block) = *block else {
            checks.push(undecodable(index));
            next_seq = None;
            continue;
        };
        let mut problems = Vec::new();

        let mut hash_ok = true;
        for tx in &block.transactions {
            if tx.compute_id() != tx.tx_id {
                hash_ok = false;
                problems.push(format!("tx seq {} id mismatch", tx.seq_no));
            }
        }
        if block.recompute_hash() != block.block_hash {
            hash_ok = false;
            problems.push("block hash mismatch".into());
        }
        if seen.contains_key(&block.block_hash) {
            hash_ok = false;
            problems.push("duplicate block".into());
        }
        let expected_height = match (mode, index) {
            (_, 0) => {
                if !block.parent_hashes.is_empty() {
                    problems.push("genesis has parents".into());
                    hash_ok = false;
                }
                Some(0)
            }
            (LedgerMode::Chain, _) => match blocks[index - 1] {
                Some(prev) => {
                    if block.parent_hashes != [prev.block_hash] {
                        problems.push("parent is not the previous block".into());
                        hash_ok = false;
                    }
                    Some(prev.height + 1)
                }
                None => None,
            },
            (LedgerMode::Dag, _) => {
                let n = block.parent_hashes.len();
                let ascending = block.parent_hashes.windows(2).all(|w| w[0] < w[1]);
                if !(1..=2).contains(&n) || !ascending {
                    problems.push(format!("{n} parents or unsorted parents"));
                    hash_ok = false;
                }
                let heights: Option<Vec<u64>> =
                    block.parent_hashes.iter().map(|p| seen.get(p).copied()).collect();
                match heights {
                    Some(h) => h.into_iter().max().map(|m| m + 1),
                    None => {
                        problems.push("parent not found earlier in file".into());
                        hash_ok = false;
                        None
                    }
                }
            }
        };
        if let Some(expected) = expected_height {
            if block.height != expected {
                problems.push(format!("height {} expected {expected}", block.height));
                hash_ok = false;
            }
        }

        let mut sig_ok = true;
        let sig = &block.authority_signature;
        let authority_key = registry.authority.filter(|a| *a == sig.signer).and_then(|a| registry.keys.get(&a));
        match authority_key {
            Some(key) if sig.verify(key, &Block::signing_body(&block.block_hash, mode)) => {}
            Some(_) => {
                sig_ok = false;
                problems.push("authority signature invalid".into());
            }
            None => {
                sig_ok = false;
                problems.push("block not signed by the authority".into());
            }
        }
        for tx in &block.transactions {
            let valid = registry.keys.get(&tx.invoker).is_some_and(|k| tx.request().verify_signature(k));
            if !valid {
                sig_ok = false;
                problems.push(format!("tx seq {} signature invalid", tx.seq_no));
            }
        }

        let mut seq_ok = !block.transactions.is_empty();
        if !seq_ok {
            problems.push("empty block".into());
        }
        for tx in &block.transactions {
            if let Some(expected) = next_seq.filter(|e| *e != tx.seq_no) {
                seq_ok = false;
                problems.push(format!("seqNo {} expected {expected}", tx.seq_no));
            }
            next_seq = Some(tx.seq_no.wrapping_add(1));
        }

        seen.insert(block.block_hash, block.height);
        checks.push(BlockCheck {
            index,
            height: block.height,
            block_hash: block.block_hash,
            hash_link_ok: hash_ok,
            signature_ok: sig_ok,
            seq_ok,
            problems,
        });
    }

    VerificationReport { valid: checks.iter().all(BlockCheck::ok), blocks: checks }
}

/// Deterministic topological order: parents first, ties by ascending block
/// hash. Independent of the order blocks are given in. Returns indices into
/// `blocks`.
pub fn linearize(blocks: &[Block]) -> Result<Vec<usize>, LedgerError> {
    let mut index_of: HashMap<Hash, usize> = HashMap::new();
    for (i, b) in blocks.iter().enumerate() {
        if index_of.insert(b.block_hash, i).is_some() {
            return Err(LedgerError::DagStructure(format!("duplicate block {}", b.block_hash)));
        }
    }
    let mut pending = vec![0usize; blocks.len()];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); blocks.len()];
    for (i, b) in blocks.iter().enumerate() {
        for p in &b.parent_hashes {
            let &pi = index_of
                .get(p)
                .ok_or_else(|| LedgerError::DagStructure(format!("block {} has missing parent {p}", b.block_hash)))?;
            pending[i] += 1;
            children[pi].push(i);
        }
    }
    let mut ready: BinaryHeap<Reverse<(Hash, usize)>> = blocks
        .iter()
        .enumerate()
        .filter(|(i, _)| pending[*i] == 0)
        .map(|(i, b)| Reverse((b.block_hash, i)))
        .collect();
    let mut order = Vec::with_capacity(blocks.len());
    while let Some(Reverse((_, i))) = ready.pop() {
        order.push(i);
        for &c in &children[i] {
            pending[c] -= 1;
            if pending[c] == 0 {
                ready.push(Reverse((blocks[c].block_hash, c)));
            }
        }
    }
    if order.len() != blocks.len() {
        return Err(LedgerError::DagStructure("cycle among parent references".into()));
    }
    Ok(order)
}

/// Execution order of the whole ledger: file order for chains, the
/// deterministic linearization for DAGs.
pub fn linearize_dag(ledger: &LedgerFile) -> Result<Vec<&Block>, LedgerError> {
    match ledger.mode {
        LedgerMode::Chain => Ok(ledger.blocks.iter().collect()),
        LedgerMode::Dag => Ok(linearize(&ledger.blocks)?.into_iter().map(|i| &ledger.blocks[i]).collect()),
    }
}

/// Transitive ancestors of `blocks[target]`, excluding the block itself.
pub fn ancestors(blocks: &[Block], target: usize) -> Result<BTreeSet<usize>, LedgerError> {
    let index_of: HashMap<Hash, usize> = blocks.iter().enumerate().map(|(i, b)| (b.block_hash, i)).collect();
    let mut out = BTreeSet::new();
    let mut stack = vec![target];
    while let Some(i) = stack.pop() {
        for p in &blocks[i].parent_hashes {
            let &pi = index_of
                .get(p)
                .ok_or_else(|| LedgerError::DagStructure(format!("missing parent {p}")))?;
            if out.insert(pi) {
                stack.push(pi);
            }
        }
    }
    if out.contains(&target) {
        return Err(LedgerError::DagStructure("cycle among parent references".into()));
    }
    Ok(out)
}
