//! Worked government contracts: diploma verification (static), thermostat
//! control and land-title access (dynamic).

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::Value;
use crate::crypto::{Hash, IdentityId};
use crate::engine::{args, Category, Contract, ContractError, ErrorCode, TxContext};
use crate::fixed::Fixed;
use crate::policy::read_config;
use crate::state::{Acl, Role};

pub const DIPLOMA: &str = "diploma";
pub const THERMOSTAT: &str = "thermostat";
pub const LAND: &str = "land";

pub fn diploma_key(holder: &IdentityId, doc_hash: &Hash) -> String {
    format!("diploma/{}/{}", holder.to_hex(), doc_hash.to_hex())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct DiplomaVerification {
    pub valid: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub institution: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub issued_at: Option<NaiveDate>,
}

impl DiplomaVerification {
    pub fn from_value(v: &Value) -> Option<DiplomaVerification> {
        let valid = v.get("valid")?.as_bool()?;
        Some(DiplomaVerification {
            valid,
            institution: v.get("institution").and_then(Value::as_str).map(str::to_owned),
            issued_at: v.get("issuedAt").and_then(Value::as_str).and_then(|s| s.parse().ok()),
        })
    }
}

fn issue_diploma(ctx: &mut TxContext<'_>, a: &Value) -> Result<Value, ContractError> {
    ctx.require_role(Role::Authority)?;
    let holder = args::id(a, "holder")?;
    let doc_hash = args::hash(a, "docHash")?;
    let institution = args::str(a, "institution")?;
    let issued_at: NaiveDate = args::str(a, "issuedAt")?
        .parse()
        .map_err(|e| ContractError::args(format!("`issuedAt`: {e}")))?;
    let record = Value::map()
        .with("docHash", doc_hash)
        .with("holder", holder)
        .with("institution", institution)
        .with("issuedAt", issued_at.to_string())
        .build();
    let authority = ctx.authority();
    ctx.insert(&diploma_key(&holder, &doc_hash), &record, authority, Acl::public())?;
    Ok(Value::Null)
}

/// One lookup, same key shape for every input; absence is `valid: false`.
fn verify_diploma(ctx: &mut TxContext<'_>, a: &Value) -> Result<Value, ContractError> {
    let key = diploma_key(&args::id(a, "holder")?, &args::hash(a, "docHash")?);
    Ok(match ctx.read_value(&key)? {
        Some(record) => Value::map()
            .with("institution", args::str(&record, "institution")?)
            .with("issuedAt", args::str(&record, "issuedAt")?)
            .with("valid", true)
            .build(),
        None => Value::map().with("valid", false).build(),
    })
}

pub fn diploma_contract() -> Contract {
    Contract::new(DIPLOMA, Category::Static).op("issue", issue_diploma).op("verify", verify_diploma)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Appliance {
    AirConditioner,
    HeatingUnit,
}

impl Appliance {
    fn prompt(self) -> &'static str {
        match self {
            Appliance::AirConditioner => {
                "The daily electricity consumption threshold has been reached. Would you like to turn on the A/C?"
            }
            Appliance::HeatingUnit => {
                "The daily electricity consumption threshold has been reached. Would you like to turn on the heating_unit?"
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase", tag = "action", content = "text")]
pub enum ThermostatAction {
    TurnOnAc,
    TurnOnHeating,
    SendPrompt(String),
    DoNothing,
}

impl ThermostatAction {
    fn turn_on(appliance: Appliance) -> ThermostatAction {
        match appliance {
            Appliance::AirConditioner => ThermostatAction::TurnOnAc,
            Appliance::HeatingUnit => ThermostatAction::TurnOnHeating,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ThermostatAction::TurnOnAc => "turnOnAC",
            ThermostatAction::TurnOnHeating => "turnOnHeating",
            ThermostatAction::SendPrompt(_) => "sendPrompt",
            ThermostatAction::DoNothing => "doNothing",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Answer {
    #[serde(rename = "YES")]
    Yes,
    #[serde(rename = "NO")]
    No,
}

impl FromStr for Answer {
    type Err = ThermostatError;
    fn from_str(s: &str) -> Result<Answer, ThermostatError> {
        match s {
            "YES" => Ok(Answer::Yes),
            "NO" => Ok(Answer::No),
            other => Err(ThermostatError::BadAnswer(other.to_owned())),
        }
    }
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Answer::Yes => "YES",
            Answer::No => "NO",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ThermostatError {
    #[error("answer given but no prompt is pending")]
    Protocol,
    #[error("answer must be YES or NO, got `{0}`")]
    BadAnswer(String),
    #[error("invalid thermostat configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ThermostatProfile {
    /// Cold room → A/C, hot room → heating, exactly as the original rule reads.
    PaperLiteral,
    /// Cold room → heating, hot room → A/C.
    Conventional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ThermostatConfig {
    pub low_temp_c: Fixed,
    pub high_temp_c: Fixed,
    pub consumption_threshold_w: Fixed,
    pub low_action: Appliance,
    pub high_action: Appliance,
}

impl Default for ThermostatConfig {
    fn default() -> Self {
        ThermostatConfig::with_profile(ThermostatProfile::PaperLiteral)
    }
}

impl ThermostatConfig {
    pub fn with_profile(profile: ThermostatProfile) -> ThermostatConfig {
        let (low_action, high_action) = match profile {
            ThermostatProfile::PaperLiteral => (Appliance::AirConditioner, Appliance::HeatingUnit),
            ThermostatProfile::Conventional => (Appliance::HeatingUnit, Appliance::AirConditioner),
        };
        ThermostatConfig {
            low_temp_c: Fixed::from_int(18),
            high_temp_c: Fixed::from_int(25),
            consumption_threshold_w: Fixed::from_int(25),
            low_action,
            high_action,
        }
    }

    pub fn validate(&self) -> Result<(), ThermostatError> {
        if self.low_temp_c >= self.high_temp_c {
            return Err(ThermostatError::Config("lowTempC must be below highTempC".into()));
        }
        if !self.consumption_threshold_w.is_positive() {
            return Err(ThermostatError::Config("consumption threshold must be positive".into()));
        }
        Ok(())
    }

    /// Which appliance the temperature calls for, if any. Comparisons are strict.
    fn branch(&self, temp_c: Fixed) -> Option<Appliance> {
        if temp_c < self.low_temp_c {
            Some(self.low_action)
        } else if temp_c > self.high_temp_c {
            Some(self.high_action)
        } else {
            None
        }
    }
}

/// The thermostat decision rule. `answer` is the user's reply to a prompt
/// that this same input produced; supplying one anywhere else is a protocol
/// violation.
pub fn thermostat_step(
    temp_c: Fixed,
    consumption_w: Fixed,
    answer: Option<Answer>,
    cfg: &ThermostatConfig,
) -> Result<ThermostatAction, ThermostatError> {
    let Some(appliance) = cfg.branch(temp_c) else {
        return match answer {
            None => Ok(ThermostatAction::DoNothing),
            Some(_) => Err(ThermostatError::Protocol),
        };
    };
    if consumption_w < cfg.consumption_threshold_w {
        return match answer {
            None => Ok(ThermostatAction::turn_on(appliance)),
            Some(_) => Err(ThermostatError::Protocol),
        };
    }
    Ok(match answer {
        None => ThermostatAction::SendPrompt(appliance.prompt().to_owned()),
        Some(Answer::Yes) => ThermostatAction::turn_on(appliance),
        Some(Answer::No) => ThermostatAction::DoNothing,
    })
}

fn thermostat_error(e: ThermostatError) -> ContractError {
    match e {
        ThermostatError::Protocol => ContractError::new(ErrorCode::Protocol, e.to_string()),
        ThermostatError::BadAnswer(_) => ContractError::args(e.to_string()),
        ThermostatError::Config(_) => ContractError::new(ErrorCode::Config, e.to_string()),
    }
}

fn device_key(owner: &IdentityId, device: &str) -> String {
    format!("device/thermostat/{}/{device}", owner.to_hex())
}

/// Configuration from `config/thermostat` (a JSON-shaped map), else the
/// paper-literal defaults.
fn load_thermostat_config(ctx: &mut TxContext<'_>) -> Result<ThermostatConfig, ContractError> {
    let cfg = match read_config(ctx, "thermostat")? {
        Some(v) => serde_json::from_value::<ThermostatConfig>(v.to_json())
            .map_err(|e| ContractError::new(ErrorCode::Config, format!("thermostat config: {e}")))?,
        None => ThermostatConfig::default(),
    };
    cfg.validate().map_err(thermostat_error)?;
    Ok(cfg)
}

fn carry_out(ctx: &mut TxContext<'_>, device: &str, action: &ThermostatAction) -> Result<(), ContractError> {
    let owner = ctx.invoker();
    match action {
        ThermostatAction::TurnOnAc | ThermostatAction::TurnOnHeating => ctx.emit(
            "device/command",
            &Value::map().with("command", action.label()).with("device", device).with("owner", owner).build(),
        ),
        ThermostatAction::SendPrompt(text) => ctx.emit(
            "device/prompt",
            &Value::map().with("device", device).with("text", text.as_str()).with("to", owner).build(),
        ),
        ThermostatAction::DoNothing => Ok(()),
    }
}

fn store_device(ctx: &mut TxContext<'_>, device: &str, record: &Value) -> Result<(), ContractError> {
    let key = device_key(&ctx.invoker(), device);
    if ctx.exists(&key) {
        ctx.write_value(&key, record)
    } else {
        let owner = ctx.invoker();
        ctx.insert(&key, record, owner, Acl::private())
    }
}

/// One sensor sample: decides, emits the command or prompt, and remembers a
/// pending prompt so the answer can be matched to it.
fn thermostat_sample(ctx: &mut TxContext<'_>, a: &Value) -> Result<Value, ContractError> {
    let device = args::str(a, "device")?;
    let temp = args::fixed(a, "tempC")?;
    let cons = args::fixed(a, "consumptionW")?;
    let cfg = load_thermostat_config(ctx)?;
    let action = thermostat_step(temp, cons, None, &cfg).map_err(thermostat_error)?;
    let prompted = matches!(action, ThermostatAction::SendPrompt(_));
    let record = Value::map()
        .with("consumptionW", cons)
        .with("pending", prompted)
        .with("tempC", temp)
        .build();
    store_device(ctx, device, &record)?;
    carry_out(ctx, device, &action)?;
    Ok(Value::from(action.label()))
}

fn thermostat_answer(ctx: &mut TxContext<'_>, a: &Value) -> Result<Value, ContractError> {
    let device = args::str(a, "device")?;
    let answer: Answer = args::str(a, "answer")?.parse().map_err(thermostat_error)?;
    let record = ctx
        .read_value(&device_key(&ctx.invoker(), device))?
        .filter(|r| r.get("pending").and_then(Value::as_bool) == Some(true))
        .ok_or_else(|| thermostat_error(ThermostatError::Protocol))?;
    let temp = args::fixed(&record, "tempC")?;
    let cons = args::fixed(&record, "consumptionW")?;
    let cfg = load_thermostat_config(ctx)?;
    let action = thermostat_step(temp, cons, Some(answer), &cfg).map_err(thermostat_error)?;
    let cleared = Value::map().with("consumptionW", cons).with("pending", false).with("tempC", temp).build();
    store_device(ctx, device, &cleared)?;
    carry_out(ctx, device, &action)?;
    Ok(Value::from(action.label()))
}

pub fn thermostat_contract() -> Contract {
    Contract::new(THERMOSTAT, Category::Dynamic)
        .op("sample", thermostat_sample)
        .op("answer", thermostat_answer)
}

pub fn land_prefix(vat: &str) -> String {
    format!("land/{vat}/")
}

fn checked_segment<'a>(a: &'a Value, key: &str) -> Result<&'a str, ContractError> {
    let s = args::str(a, key)?;
    if s.is_empty() || s.contains('/') {
        return Err(ContractError::args(format!("`{key}` must be non-empty and contain no `/`")));
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct LandTitle {
    pub vat_number: String,
    pub parcel_id: String,
    pub owner_id: IdentityId,
}

impl LandTitle {
    pub fn to_value(&self) -> Value {
        Value::map()
            .with("ownerId", self.owner_id)
            .with("parcelId", self.parcel_id.as_str())
            .with("vatNumber", self.vat_number.as_str())
            .build()
    }

    pub fn from_value(v: &Value) -> Result<LandTitle, ContractError> {
        Ok(LandTitle {
            vat_number: args::str(v, "vatNumber")?.to_owned(),
            parcel_id: args::str(v, "parcelId")?.to_owned(),
            owner_id: args::id(v, "ownerId")?,
        })
    }
}

fn register_title(ctx: &mut TxContext<'_>, a: &Value) -> Result<Value, ContractError> {
    ctx.require_role(Role::Authority)?;
    let title = LandTitle {
        vat_number: checked_segment(a, "vat")?.to_owned(),
        parcel_id: checked_segment(a, "parcel")?.to_owned(),
        owner_id: args::id(a, "owner")?,
    };
    if ctx.identity(&title.owner_id)?.is_none() {
        return Err(ContractError::new(ErrorCode::NotFound, format!("owner {} not registered", title.owner_id)));
    }
    let key = format!("{}{}", land_prefix(&title.vat_number), title.parcel_id);
    ctx.insert(&key, &title.to_value(), title.owner_id, Acl::private())?;
    Ok(Value::Null)
}

/// Titles under the VAT prefix the tax service may see. Some titles but no
/// permission on any of them is a permission failure; an unknown VAT is an
/// empty list.
fn query_titles(ctx: &mut TxContext<'_>, a: &Value) -> Result<Value, ContractError> {
    ctx.require_role(Role::TaxService)?;
    let vat = checked_segment(a, "vat")?;
    let keys = ctx.scan_keys(&land_prefix(vat));
    let mut titles = Vec::new();
    for key in &keys {
        if ctx.can_read(key) {
            let v = ctx.read_value(key)?.expect("listed key exists");
            titles.push(LandTitle::from_value(&v)?.to_value());
        }
    }
    if !keys.is_empty() && titles.is_empty() {
        return Err(ContractError::permission(format!("no citizen consent covers VAT {vat}")));
    }
    Ok(Value::List(titles))
}

pub fn land_contract() -> Contract {
    Contract::new(LAND, Category::Dynamic).op("register", register_title).op("query", query_titles)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fx(s: &str) -> Fixed {
        s.parse().unwrap()
    }

    #[test]
    fn paper_examples() {
        let cfg = ThermostatConfig::default();
        assert_eq!(thermostat_step(fx("17"), fx("20"), None, &cfg), Ok(ThermostatAction::TurnOnAc));
        let prompt = thermostat_step(fx("26"), fx("30"), None, &cfg).unwrap();
        assert!(matches!(&prompt, ThermostatAction::SendPrompt(t) if t.ends_with("heating_unit?")));
        assert_eq!(thermostat_step(fx("26"), fx("30"), Some(Answer::Yes), &cfg), Ok(ThermostatAction::TurnOnHeating));
        assert_eq!(thermostat_step(fx("20"), fx("99"), None, &cfg), Ok(ThermostatAction::DoNothing));
    }

    #[test]
    fn boundaries_are_strict() {
        let cfg = ThermostatConfig::default();
        assert_eq!(thermostat_step(fx("18"), fx("1"), None, &cfg), Ok(ThermostatAction::DoNothing));
        assert_eq!(thermostat_step(fx("25"), fx("1"), None, &cfg), Ok(ThermostatAction::DoNothing));
        // exactly at the threshold prompts
        assert!(matches!(thermostat_step(fx("17.9999"), fx("25"), None, &cfg), Ok(ThermostatAction::SendPrompt(_))));
    }

    #[test]
    fn conventional_profile_swaps_appliances() {
        let cfg = ThermostatConfig::with_profile(ThermostatProfile::Conventional);
        assert_eq!(thermostat_step(fx("10"), fx("0"), None, &cfg), Ok(ThermostatAction::TurnOnHeating));
        assert_eq!(thermostat_step(fx("30"), fx("0"), None, &cfg), Ok(ThermostatAction::TurnOnAc));
    }

    #[test]
    fn stray_answers_are_protocol_errors() {
        let cfg = ThermostatConfig::default();
        assert_eq!(thermostat_step(fx("20"), fx("30"), Some(Answer::No), &cfg), Err(ThermostatError::Protocol));
        assert_eq!(thermostat_step(fx("10"), fx("3"), Some(Answer::Yes), &cfg), Err(ThermostatError::Protocol));
    }

    #[test]
    fn config_validation() {
        let mut cfg = ThermostatConfig::default();
        cfg.low_temp_c = fx("30");
        assert!(cfg.validate().is_err());
        let json = serde_json::to_value(ThermostatConfig::default()).unwrap();
        assert_eq!(json["lowTempC"], "18.0000");
        assert_eq!(json["lowAction"], "airConditioner");
    }
}
