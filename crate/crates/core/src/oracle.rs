//! Oracle ingress: scripted external feeds polled into signed on-ledger
//! records, and the law-change notification contract built on them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{CodecError, Value};
use crate::crypto::{Hash, IdentityId, KeyPair};
use crate::engine::{args, Category, Contract, ContractError, ErrorCode, TxContext};
use crate::ledger::TxRequest;
use crate::state::{Acl, Role, NS_ORACLE};

pub const ORACLE: &str = "oracle";
pub const LAW: &str = "law";
pub const KIND_LAW: &str = "law";

pub fn record_key(source: &str, n: u64) -> String {
    format!("{NS_ORACLE}{source}/{n:06}")
}

fn head_key(source: &str) -> String {
    format!("{NS_ORACLE}{source}/head")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleRecord {
    pub source: String,
    pub kind: String,
    pub payload: Value,
    pub observed_at: u64,
    /// Logical time of the transaction that wrote the record.
    pub written_at: u64,
    pub oracle_id: IdentityId,
    pub state_key: String,
}

impl OracleRecord {
    pub fn from_value(state_key: &str, v: &Value) -> Result<OracleRecord, ContractError> {
        Ok(OracleRecord {
            source: args::str(v, "source")?.to_owned(),
            kind: args::str(v, "kind")?.to_owned(),
            payload: args::get(v, "payload")?.clone(),
            observed_at: args::uint(v, "observedAt")?,
            written_at: args::uint(v, "writtenAt")?,
            oracle_id: args::id(v, "oracleId")?,
            state_key: state_key.to_owned(),
        })
    }
}

/// Appends one observation under `oracle/<source>/<n>`. Only oracles may
/// write the namespace (enforced by the engine as well as here).
fn record(ctx: &mut TxContext<'_>, a: &Value) -> Result<Value, ContractError> {
    ctx.require_role(Role::Oracle)?;
    let source = args::str(a, "source")?;
    if source.is_empty() || source.contains('/') {
        return Err(ContractError::args("`source` must be non-empty and contain no `/`"));
    }
    let observed_at = args::uint(a, "observedAt")?;
    if observed_at > ctx.logical_time() {
        return Err(ContractError::new(ErrorCode::Ordering, "observation is from the future"));
    }
    let head = head_key(source);
    let n = match ctx.read_value(&head)? {
        Some(v) => v.as_int().ok_or_else(|| ContractError::new(ErrorCode::Validation, "bad feed head"))? as u64 + 1,
        None => 1,
    };
    let key = record_key(source, n);
    let value = Value::map()
        .with("kind", args::str(a, "kind")?)
        .with("observedAt", observed_at as i64)
        .with("oracleId", ctx.invoker())
        .with("payload", args::get(a, "payload")?.clone())
        .with("source", source)
        .with("writtenAt", ctx.logical_time() as i64)
        .build();
    let invoker = ctx.invoker();
    ctx.insert(&key, &value, invoker, Acl::public())?;
    if n == 1 {
        ctx.insert(&head, &Value::Int(1), invoker, Acl::public())?;
    } else {
        ctx.write_value(&head, &Value::Int(n as i64))?;
    }
    ctx.emit("oracle/record", &Value::map().with("key", key.as_str()).with("source", source).build())?;
    Ok(Value::from(key))
}

pub fn oracle_contract() -> Contract {
    Contract::new(ORACLE, Category::OracleDriven).op("record", record)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FeedError {
    #[error("feed `{0}` is not declared")]
    UnknownFeed(String),
    #[error("feed `{feed}`: {reason}")]
    BadEvent { feed: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedEvent {
    pub at: u64,
    pub payload: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feed {
    pub name: String,
    pub kind: String,
    pub events: Vec<FeedEvent>,
}

/// One observation ready to be written by an oracle identity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation {
    pub source: String,
    pub kind: String,
    pub payload: Value,
    pub observed_at: u64,
}

impl Observation {
    pub fn to_request(&self, oracle: &KeyPair, at: u64) -> Result<TxRequest, CodecError> {
        let args = Value::map()
            .with("kind", self.kind.as_str())
            .with("observedAt", self.observed_at as i64)
            .with("payload", self.payload.clone())
            .with("source", self.source.as_str())
            .build();
        TxRequest::new(oracle, ORACLE, "record", &args, at)
    }
}

/// Off-ledger cursor over the scripted feeds.
#[derive(Debug, Clone, Default)]
pub struct FeedPoller {
    feeds: BTreeMap<String, (Feed, usize)>,
}

impl FeedPoller {
    /// Events are taken in time order, file order on ties.
    pub fn new(feeds: impl IntoIterator<Item = Feed>) -> Result<FeedPoller, FeedError> {
        let mut map = BTreeMap::new();
        for mut feed in feeds {
            for e in &feed.events {
                Value::from_json(&e.payload).map_err(|err: CodecError| FeedError::BadEvent {
                    feed: feed.name.clone(),
                    reason: err.to_string(),
                })?;
            }
            feed.events.sort_by_key(|e| e.at);
            map.insert(feed.name.clone(), (feed, 0));
        }
        Ok(FeedPoller { feeds: map })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.feeds.keys().map(String::as_str)
    }

    pub fn kind(&self, feed: &str) -> Option<&str> {
        self.feeds.get(feed).map(|(f, _)| f.kind.as_str())
    }

    /// The earliest unwritten event at or before `at`, advancing the cursor.
    pub fn poll(&mut self, feed: &str, at: u64) -> Result<Option<Observation>, FeedError> {
        let (f, cursor) = self.feeds.get_mut(feed).ok_or_else(|| FeedError::UnknownFeed(feed.to_owned()))?;
        let Some(event) = f.events.get(*cursor).filter(|e| e.at <= at) else { return Ok(None) };
        *cursor += 1;
        Ok(Some(Observation {
            source: f.name.clone(),
            kind: f.kind.clone(),
            payload: Value::from_json(&event.payload).expect("validated on construction"),
            observed_at: event.at,
        }))
    }

    /// Times at which some feed has an event.
    pub fn event_times(&self) -> impl Iterator<Item = u64> + '_ {
        self.feeds.values().flat_map(|(f, _)| f.events.iter().map(|e| e.at))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct LawNotification {
    pub law_id: String,
    pub version_hash: Hash,
    pub sent_at: u64,
    pub recipients: Vec<IdentityId>,
    pub confirmations: BTreeMap<IdentityId, u64>,
}

pub fn notification_key(law_id: &str, version_hash: &Hash) -> String {
    format!("law/{law_id}/{}", version_hash.to_hex())
}

fn confirmation_key(law_id: &str, version_hash: &Hash, who: &IdentityId) -> String {
    format!("{}/confirm/{}", notification_key(law_id, version_hash), who.to_hex())
}

/// Turns a law-kind oracle record into a notification with one event per
/// recipient. `sentAt` is the logical time the oracle wrote the record.
fn notify(ctx: &mut TxContext<'_>, a: &Value) -> Result<Value, ContractError> {
    if ctx.role() != Role::Oracle && ctx.role() != Role::Authority {
        return Err(ContractError::permission("law notifications are sent by oracles or the authority"));
    }
    let record_key = args::str(a, "recordKey")?;
    if !record_key.starts_with(NS_ORACLE) {
        return Err(ContractError::args("external facts come from `oracle/` keys only"));
    }
    let raw = ctx
        .read_value(record_key)?
        .ok_or_else(|| ContractError::new(ErrorCode::NotFound, format!("`{record_key}` not found")))?;
    let record = OracleRecord::from_value(record_key, &raw)?;
    if record.kind != KIND_LAW {
        return Err(ContractError::new(ErrorCode::Validation, format!("record kind `{}` is not a law", record.kind)));
    }
    let recipients: Vec<IdentityId> = args::list(a, "recipients")?
        .iter()
        .map(|v| {
            v.as_bytes()
                .and_then(|b| <[u8; 32]>::try_from(b).ok())
                .map(|b| IdentityId(Hash(b)))
                .ok_or_else(|| ContractError::args("recipients must be identity ids"))
        })
        .collect::<Result<_, _>>()?;
    if recipients.is_empty() {
        return Err(ContractError::new(ErrorCode::Config, "a law notification needs at least one recipient"));
    }
    let law_id = args::str(&record.payload, "lawId")?;
    if law_id.is_empty() || law_id.contains('/') {
        return Err(ContractError::args("`lawId` must be non-empty and contain no `/`"));
    }
    let version_hash = Hash::digest(args::str(&record.payload, "text")?.as_bytes());
    let value = Value::map()
        .with("lawId", law_id)
        .with("recipients", recipients.iter().map(|r| Value::from(*r)).collect::<Vec<_>>())
        .with("recordKey", record_key)
        .with("sentAt", record.written_at as i64)
        .with("versionHash", version_hash)
        .build();
    let invoker = ctx.invoker();
    ctx.insert(&notification_key(law_id, &version_hash), &value, invoker, Acl::public())?;
    for r in &recipients {
        ctx.emit(
            "law/notify",
            &Value::map()
                .with("lawId", law_id)
                .with("sentAt", record.written_at as i64)
                .with("to", *r)
                .with("versionHash", version_hash)
                .build(),
        )?;
    }
    Ok(version_hash.into())
}

fn load_notification(ctx: &mut TxContext<'_>, law_id: &str, vh: &Hash) -> Result<(Vec<IdentityId>, u64), ContractError> {
    let v = ctx
        .read_value(&notification_key(law_id, vh))?
        .ok_or_else(|| ContractError::new(ErrorCode::NotFound, format!("no notification for {law_id}")))?;
    let recipients = args::list(&v, "recipients")?
        .iter()
        .filter_map(|r| r.as_bytes().and_then(|b| <[u8; 32]>::try_from(b).ok()).map(|b| IdentityId(Hash(b))))
        .collect();
    Ok((recipients, args::uint(&v, "sentAt")?))
}

fn confirm(ctx: &mut TxContext<'_>, a: &Value) -> Result<Value, ContractError> {
    let law_id = args::str(a, "lawId")?;
    let vh = args::hash(a, "versionHash")?;
    let (recipients, sent_at) = load_notification(ctx, law_id, &vh)?;
    let who = ctx.invoker();
    if !recipients.contains(&who) {
        return Err(ContractError::permission(format!("{who} is not a recipient of {law_id}")));
    }
    let now = ctx.logical_time();
    if now < sent_at {
        return Err(ContractError::new(ErrorCode::Ordering, "confirmation precedes the notification"));
    }
    let key = confirmation_key(law_id, &vh, &who);
    ctx.insert(&key, &Value::Int(now as i64), who, Acl::public())?;
    Ok(Value::Int(now as i64))
}

fn status(ctx: &mut TxContext<'_>, a: &Value) -> Result<Value, ContractError> {
    let law_id = args::str(a, "lawId")?;
    let vh = args::hash(a, "versionHash")?;
    let (recipients, sent_at) = load_notification(ctx, law_id, &vh)?;
    let mut confirmations = BTreeMap::new();
    for r in &recipients {
        if let Some(t) = ctx.read_value(&confirmation_key(law_id, &vh, r))? {
            confirmations.insert(r.to_hex(), t);
        }
    }
    Ok(Value::map()
        .with("confirmations", Value::Map(confirmations))
        .with("lawId", law_id)
        .with("recipients", recipients.into_iter().map(Value::from).collect::<Vec<_>>())
        .with("sentAt", sent_at as i64)
        .with("versionHash", vh)
        .build())
}

pub fn law_contract() -> Contract {
    Contract::new(LAW, Category::OracleDriven)
        .op("notify", notify)
        .op("confirm", confirm)
        .op("status", status)
}

/// Decodes a `law.status` return value.
pub fn parse_status(v: &Value) -> Result<LawNotification, ContractError> {
    let ids = |list: &[Value]| -> Result<Vec<IdentityId>, ContractError> {
        list.iter()
            .map(|r| {
                r.as_bytes()
                    .and_then(|b| <[u8; 32]>::try_from(b).ok())
                    .map(|b| IdentityId(Hash(b)))
                    .ok_or_else(|| ContractError::args("bad identity"))
            })
            .collect()
    };
    let mut confirmations = BTreeMap::new();
    for (k, t) in args::get(v, "confirmations")?.as_map().into_iter().flatten() {
        let id: IdentityId = k.parse().map_err(|_| ContractError::args("bad confirmation key"))?;
        confirmations.insert(id, t.as_int().unwrap_or_default() as u64);
    }
    Ok(LawNotification {
        law_id: args::str(v, "lawId")?.to_owned(),
        version_hash: args::hash(v, "versionHash")?,
        sent_at: args::uint(v, "sentAt")?,
        recipients: ids(args::list(v, "recipients")?)?,
        confirmations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn law_feed() -> Feed {
        Feed {
            name: "laws".into(),
            kind: KIND_LAW.into(),
            events: vec![FeedEvent { at: 100, payload: json!({"lawId": "inheritance", "text": "v2"}) }],
        }
    }

    #[test]
    fn poll_is_idempotent_and_time_gated() {
        let mut poller = FeedPoller::new([law_feed()]).unwrap();
        assert_eq!(poller.poll("laws", 99).unwrap(), None);
        let obs = poller.poll("laws", 100).unwrap().unwrap();
        assert_eq!(obs.observed_at, 100);
        assert_eq!(obs.payload.get("lawId").and_then(Value::as_str), Some("inheritance"));
        assert_eq!(poller.poll("laws", 101).unwrap(), None);
    }

    #[test]
    fn unknown_feed_is_an_error() {
        let mut poller = FeedPoller::new([law_feed()]).unwrap();
        assert_eq!(poller.poll("weather", 5), Err(FeedError::UnknownFeed("weather".into())));
    }

    #[test]
    fn float_payloads_are_rejected_up_front() {
        let mut feed = law_feed();
        feed.events[0].payload = json!({"x": 1.5});
        assert!(matches!(FeedPoller::new([feed]), Err(FeedError::BadEvent { .. })));
    }

    #[test]
    fn record_keys_sort_by_sequence() {
        assert!(record_key("laws", 9) < record_key("laws", 10));
        assert_eq!(record_key("laws", 1), "oracle/laws/000001");
    }
}
