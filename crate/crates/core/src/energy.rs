//! Prosumer energy: signed meter readings, surplus dispatch with payment,
//! and per-district swarm aggregation.

use serde::{Deserialize, Serialize};

use crate::codec::{CodecError, Value};
use crate::crypto::{IdentityId, KeyPair, PublicKey, Signature};
use crate::engine::{args, Category, Contract, ContractError, ErrorCode, TxContext};
use crate::fixed::Fixed;
use crate::ledger::TxRequest;
use crate::policy::read_config;
use crate::state::{self, Acl, Identity, Perms, Role};
use crate::swarm;

pub const ENERGY: &str = "energy";
pub const DAY_MS: u64 = 86_400_000;
pub const HOUR_MS: u64 = 3_600_000;
/// Reading timestamps are zero-padded to this many digits so keys sort by time.
const AT_DIGITS: usize = 13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct EnergyConfig {
    #[serde(rename = "dailyNeedKWh")]
    pub daily_need_kwh: Fixed,
    #[serde(rename = "minSurplusKWh")]
    pub min_surplus_kwh: Fixed,
    pub tariff: Fixed,
    pub central_fraction: Fixed,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        EnergyConfig {
            daily_need_kwh: Fixed::from_int(14),
            min_surplus_kwh: Fixed::from_int(1),
            tariff: Fixed::from_raw(1_000),
            central_fraction: Fixed::from_raw(7_000),
        }
    }
}

impl EnergyConfig {
    pub fn trigger_kwh(&self) -> Fixed {
        self.daily_need_kwh + self.min_surplus_kwh
    }

    pub fn to_value(&self) -> Value {
        Value::map()
            .with("centralFraction", self.central_fraction)
            .with("dailyNeedKWh", self.daily_need_kwh)
            .with("minSurplusKWh", self.min_surplus_kwh)
            .with("tariff", self.tariff)
            .build()
    }
}

/// Surplus and payment for one day's production, if production exceeds the
/// trigger. Payment is rounded half-even to four digits.
pub fn evaluate_dispatch(produced: Fixed, cfg: &EnergyConfig) -> Result<Option<(Fixed, Fixed)>, ContractError> {
    if produced <= cfg.trigger_kwh() {
        return Ok(None);
    }
    let surplus = produced - cfg.daily_need_kwh;
    let payment = surplus
        .mul(cfg.tariff)
        .map_err(|e| ContractError::new(ErrorCode::Validation, e.to_string()))?;
    Ok(Some((surplus, payment)))
}

pub fn reading_key(prosumer: &IdentityId, at: u64) -> String {
    format!("energy/{}/{at:0AT_DIGITS$}", prosumer.to_hex())
}

pub fn meter_key(device: &str) -> String {
    format!("device/meter/{device}")
}

pub fn dispatch_key(prosumer: &IdentityId, day: u64) -> String {
    format!("energy/dispatch/{}/{day:05}", prosumer.to_hex())
}

pub fn account_key(owner: &IdentityId) -> String {
    format!("energy/account/{}", owner.to_hex())
}

pub fn district_key(district: &str, day: u64) -> String {
    format!("energy/district/{district}/{day:05}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MeterReading {
    pub device_id: String,
    pub prosumer: IdentityId,
    pub at: u64,
    #[serde(rename = "consumedKWh")]
    pub consumed_kwh: Fixed,
    #[serde(rename = "producedKWh")]
    pub produced_kwh: Fixed,
    pub temp_c: Fixed,
}

impl MeterReading {
    /// The bytes the device key signs.
    pub fn to_value(&self) -> Value {
        Value::map()
            .with("at", self.at as i64)
            .with("consumedKWh", self.consumed_kwh)
            .with("deviceId", self.device_id.as_str())
            .with("producedKWh", self.produced_kwh)
            .with("prosumer", self.prosumer)
            .with("tempC", self.temp_c)
            .build()
    }

    pub fn from_value(v: &Value) -> Result<MeterReading, ContractError> {
        Ok(MeterReading {
            device_id: args::str(v, "deviceId")?.to_owned(),
            prosumer: args::id(v, "prosumer")?,
            at: args::uint(v, "at")?,
            consumed_kwh: args::fixed(v, "consumedKWh")?,
            produced_kwh: args::fixed(v, "producedKWh")?,
            temp_c: args::fixed(v, "tempC")?,
        })
    }

    pub fn sign(&self, device: &KeyPair) -> Result<Signature, CodecError> {
        Ok(device.sign(&self.to_value().encode()?))
    }

    /// `ingest` request submitted by the prosumer, carrying the device signature.
    pub fn to_request(&self, prosumer: &KeyPair, device: &KeyPair, time: u64) -> Result<TxRequest, CodecError> {
        let args = Value::map()
            .with("reading", self.to_value())
            .with("signature", self.sign(device)?.to_value())
            .build();
        TxRequest::new(prosumer, ENERGY, "ingest", &args, time)
    }
}

fn load_config(ctx: &mut TxContext<'_>) -> Result<EnergyConfig, ContractError> {
    match read_config(ctx, "energy")? {
        Some(v) => serde_json::from_value(v.to_json())
            .map_err(|e| ContractError::new(ErrorCode::Config, format!("energy config: {e}"))),
        None => Ok(EnergyConfig::default()),
    }
}

/// Authority binds a meter's public key to a registered prosumer.
fn register_device(ctx: &mut TxContext<'_>, a: &Value) -> Result<Value, ContractError> {
    ctx.require_role(Role::Authority)?;
    let device = args::str(a, "deviceId")?;
    if device.is_empty() || device.contains('/') {
        return Err(ContractError::args("`deviceId` must be non-empty and contain no `/`"));
    }
    let owner = args::id(a, "owner")?;
    match ctx.identity(&owner)? {
        Some(i) if i.role == Role::Prosumer => {}
        Some(i) => return Err(ContractError::new(ErrorCode::Validation, format!("meters belong to prosumers, not {}", i.role))),
        None => return Err(ContractError::new(ErrorCode::NotFound, format!("prosumer {owner} not registered"))),
    }
    let record = Value::map()
        .with("deviceId", device)
        .with("lastAt", Value::Null)
        .with("owner", owner)
        .with("publicKey", PublicKey(args::array(a, "publicKey")?))
        .build();
    ctx.insert(&meter_key(device), &record, owner, Acl::public())?;
    Ok(Value::Null)
}

/// Checks a device-signed sample against its registration and advances the
/// device's last timestamp. Shared by the meter and wearable contracts.
pub(crate) fn accept_device_sample(
    ctx: &mut TxContext<'_>,
    device_key: &str,
    owner_field_value: IdentityId,
    at: u64,
    body: &Value,
    signature: &Signature,
) -> Result<(), ContractError> {
    let record = ctx
        .read_value(device_key)?
        .ok_or_else(|| ContractError::permission(format!("`{device_key}` is not registered")))?;
    let owner = args::id(&record, "owner")?;
    if owner != owner_field_value || owner != ctx.invoker() {
        return Err(ContractError::permission("device is registered to someone else"));
    }
    let key = PublicKey(args::array(&record, "publicKey")?);
    if !signature.verify(&key, &body.encode()?) {
        return Err(ContractError::permission("device signature does not verify"));
    }
    if at >= 10u64.pow(AT_DIGITS as u32) {
        return Err(ContractError::args("timestamp out of range"));
    }
    if let Some(last) = args::opt(&record, "lastAt") {
        let last = last.as_int().unwrap_or(i64::MAX) as u64;
        if at <= last {
            return Err(ContractError::new(ErrorCode::Ordering, format!("timestamp {at} not after {last}")));
        }
    }
    let mut updated = record.as_map().expect("record is a map").clone();
    updated.insert("lastAt".into(), Value::Int(at as i64));
    ctx.write_value(device_key, &Value::Map(updated))
}

fn ingest(ctx: &mut TxContext<'_>, a: &Value) -> Result<Value, ContractError> {
    let body = args::get(a, "reading")?;
    let reading = MeterReading::from_value(body)?;
    if reading.consumed_kwh < Fixed::ZERO || reading.produced_kwh < Fixed::ZERO {
        return Err(ContractError::new(ErrorCode::Validation, "energy quantities are non-negative"));
    }
    let signature = Signature::from_value(args::get(a, "signature")?)?;
    accept_device_sample(ctx, &meter_key(&reading.device_id), reading.prosumer, reading.at, body, &signature)?;
    let owner = reading.prosumer;
    ctx.insert(&reading_key(&owner, reading.at), body, owner, Acl::private())?;
    Ok(Value::Null)
}

/// Readings of `prosumer` whose timestamp falls on `day`.
fn day_readings(ctx: &mut TxContext<'_>, prosumer: &IdentityId, day: u64) -> Result<Vec<MeterReading>, ContractError> {
    let prefix = format!("energy/{}/", prosumer.to_hex());
    let lo = reading_key(prosumer, day * DAY_MS);
    let hi = reading_key(prosumer, (day + 1) * DAY_MS);
    let mut out = Vec::new();
    for key in ctx.scan_keys(&prefix) {
        if key.len() == lo.len() && key >= lo && key < hi {
            let v = ctx.read_value(&key)?.expect("listed key exists");
            out.push(MeterReading::from_value(&v)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase", tag = "kind", content = "peer")]
pub enum Destination {
    CentralGrid,
    GridPeer(IdentityId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct DispatchOrder {
    pub prosumer: IdentityId,
    pub day: u64,
    #[serde(rename = "producedKWh")]
    pub produced_kwh: Fixed,
    #[serde(rename = "surplusKWh")]
    pub surplus_kwh: Fixed,
    pub destination: Destination,
    pub tariff: Fixed,
    pub payment: Fixed,
    pub at: u64,
}

impl DispatchOrder {
    pub fn to_value(&self) -> Value {
        let (kind, peer) = match self.destination {
            Destination::CentralGrid => ("centralGrid", None),
            Destination::GridPeer(p) => ("gridPeer", Some(p)),
        };
        Value::map()
            .with("at", self.at as i64)
            .with("day", self.day as i64)
            .with("destination", kind)
            .with("payment", self.payment)
            .with("peer", peer)
            .with("producedKWh", self.produced_kwh)
            .with("prosumer", self.prosumer)
            .with("surplusKWh", self.surplus_kwh)
            .with("tariff", self.tariff)
            .build()
    }

    pub fn from_value(v: &Value) -> Result<DispatchOrder, ContractError> {
        let destination = match args::str(v, "destination")? {
            "centralGrid" => Destination::CentralGrid,
            "gridPeer" => Destination::GridPeer(args::id(v, "peer")?),
            other => return Err(ContractError::args(format!("unknown destination `{other}`"))),
        };
        Ok(DispatchOrder {
            prosumer: args::id(v, "prosumer")?,
            day: args::uint(v, "day")?,
            produced_kwh: args::fixed(v, "producedKWh")?,
            surplus_kwh: args::fixed(v, "surplusKWh")?,
            destination,
            tariff: args::fixed(v, "tariff")?,
            payment: args::fixed(v, "payment")?,
            at: args::uint(v, "at")?,
        })
    }
}

fn credit(ctx: &mut TxContext<'_>, owner: IdentityId, amount: Fixed) -> Result<Fixed, ContractError> {
    let key = account_key(&owner);
    let balance = match ctx.read_value(&key)? {
        Some(v) => args::fixed(&v, "balance")? + amount,
        None => amount,
    };
    let value = Value::map().with("balance", balance).with("owner", owner).build();
    if ctx.exists(&key) {
        ctx.write_value(&key, &value)?;
    } else {
        let authority = ctx.authority();
        ctx.insert(&key, &value, authority, Acl::private().with(owner, Perms::READ))?;
    }
    Ok(balance)
}

/// Evaluates one prosumer-day. No surplus is a `null` result, not an error.
fn dispatch(ctx: &mut TxContext<'_>, a: &Value) -> Result<Value, ContractError> {
    ctx.require_role(Role::Authority)?;
    let prosumer = args::id(a, "prosumer")?;
    let day = args::uint(a, "day")?;
    let cfg = load_config(ctx)?;
    let destination = match args::opt(a, "peer") {
        Some(_) => Destination::GridPeer(args::id(a, "peer")?),
        None => Destination::CentralGrid,
    };
    let produced: Fixed = day_readings(ctx, &prosumer, day)?.iter().map(|r| r.produced_kwh).sum();
    let Some((surplus, payment)) = evaluate_dispatch(produced, &cfg)? else {
        return Ok(Value::Null);
    };
    let order = DispatchOrder {
        prosumer,
        day,
        produced_kwh: produced,
        surplus_kwh: surplus,
        destination,
        tariff: cfg.tariff,
        payment,
        at: ctx.logical_time(),
    };
    let authority = ctx.authority();
    ctx.insert(&dispatch_key(&prosumer, day), &order.to_value(), authority, Acl::private().with(prosumer, Perms::READ))?;
    credit(ctx, prosumer, payment)?;
    ctx.emit("energy/dispatch", &order.to_value())?;
    Ok(order.to_value())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct DistrictAggregate {
    pub district_id: String,
    pub day: u64,
    pub members: usize,
    pub rounds: u64,
    #[serde(rename = "totalSurplusKWh")]
    pub total_surplus_kwh: Fixed,
    #[serde(rename = "toCentralKWh")]
    pub to_central_kwh: Fixed,
    #[serde(rename = "toTradeKWh")]
    pub to_trade_kwh: Fixed,
    pub computed_at: u64,
}

impl DistrictAggregate {
    pub fn from_value(v: &Value) -> Result<DistrictAggregate, ContractError> {
        Ok(DistrictAggregate {
            district_id: args::str(v, "districtId")?.to_owned(),
            day: args::uint(v, "day")?,
            members: args::uint(v, "members")? as usize,
            rounds: args::uint(v, "rounds")?,
            total_surplus_kwh: args::fixed(v, "totalSurplusKWh")?,
            to_central_kwh: args::fixed(v, "toCentralKWh")?,
            to_trade_kwh: args::fixed(v, "toTradeKWh")?,
            computed_at: args::uint(v, "computedAt")?,
        })
    }
}

/// Prosumers of `district`, in identity-id order.
fn district_members(ctx: &mut TxContext<'_>, district: &str) -> Result<Vec<IdentityId>, ContractError> {
    let mut out = Vec::new();
    for key in ctx.scan_keys(state::NS_IDENTITY) {
        let Some(bytes) = ctx.read(&key)? else { continue };
        let identity = Identity::decode(&bytes)?;
        if identity.role == Role::Prosumer && identity.district.as_deref() == Some(district) {
            out.push(identity.id);
        }
    }
    Ok(out)
}

/// Swarm aggregation of the day's dispatched surplus across a district.
fn aggregate(ctx: &mut TxContext<'_>, a: &Value) -> Result<Value, ContractError> {
    ctx.require_role(Role::Authority)?;
    let district = args::str(a, "district")?;
    if district.is_empty() || district.contains('/') {
        return Err(ContractError::args("`district` must be non-empty and contain no `/`"));
    }
    let day = args::uint(a, "day")?;
    let seed = args::int(a, "seed")? as u64;
    let members = district_members(ctx, district)?;
    let rounds = match args::opt(a, "rounds") {
        Some(_) => args::uint(a, "rounds")? as usize,
        None => swarm::default_rounds(members.len()),
    };
    let mut surpluses = Vec::with_capacity(members.len());
    for m in &members {
        let s = match ctx.read_value(&dispatch_key(m, day))? {
            Some(v) => args::fixed(&v, "surplusKWh")?,
            None => Fixed::ZERO,
        };
        surpluses.push(s);
    }
    let arith = |e: crate::fixed::FixedError| ContractError::new(ErrorCode::Validation, e.to_string());
    let Some((total, _)) = swarm::aggregate(&surpluses, rounds, seed).map_err(arith)? else {
        return Ok(Value::Null);
    };
    let cfg = load_config(ctx)?;
    let split = swarm::split(total, cfg.central_fraction).map_err(arith)?;
    let value = Value::map()
        .with("computedAt", ctx.logical_time() as i64)
        .with("day", day as i64)
        .with("districtId", district)
        .with("members", members.len() as i64)
        .with("rounds", rounds as i64)
        .with("toCentralKWh", split.to_central)
        .with("toTradeKWh", split.to_trade)
        .with("totalSurplusKWh", split.total)
        .build();
    let authority = ctx.authority();
    ctx.insert(&district_key(district, day), &value, authority, Acl::public())?;
    ctx.emit("energy/district", &value)?;
    Ok(value)
}

pub fn energy_contract() -> Contract {
    Contract::new(ENERGY, Category::Dynamic)
        .op("registerDevice", register_device)
        .op("ingest", ingest)
        .op("dispatch", dispatch)
        .op("aggregate", aggregate)
}

/// Hourly consumption series (index = hour since epoch) summed over all
/// readings in `readings`, up to the last hour with data.
pub fn hourly_series<'a>(readings: impl IntoIterator<Item = &'a MeterReading>) -> Vec<Fixed> {
    let mut series: Vec<Fixed> = Vec::new();
    for r in readings {
        let hour = (r.at / HOUR_MS) as usize;
        if series.len() <= hour {
            series.resize(hour + 1, Fixed::ZERO);
        }
        series[hour] = series[hour] + r.consumed_kwh;
    }
    series
}
