//! Permission-layer contracts: identity registration, generic data access,
//! consent records and network configuration.

use crate::codec::Value;
use crate::crypto::{Hash, IdentityId, PublicKey, Signature};
use crate::engine::{args, Category, Contract, ContractError, ErrorCode, TxContext};
use crate::state::{
    self, grant_key, Acl, ConsentError, ConsentGrants, ConsentRecord, ConsentStatus, Identity, Perms, Role,
    NS_CONFIG,
};

pub const IDENTITY: &str = "identity";
pub const DATA: &str = "data";
pub const CONSENT: &str = "consent";
pub const SYSTEM: &str = "system";

/// Namespace the generic `data` contract may write.
pub const NS_DATA: &str = "data/";

/// Argument value for `identity.register` / `identity.bootstrap`.
pub fn registration_args(
    public_key: PublicKey,
    role: Role,
    district: Option<&str>,
    label: &str,
    credential: &Signature,
) -> Value {
    Value::map()
        .with("credential", credential.to_value())
        .with("district", district)
        .with("label", label)
        .with("publicKey", public_key)
        .with("role", role.as_str())
        .build()
}

fn parse_registration(args: &Value) -> Result<Identity, ContractError> {
    let public_key = PublicKey(args::array(args, "publicKey")?);
    let role: Role = args::str(args, "role")?.parse().map_err(ContractError::args)?;
    let district = args::opt(args, "district")
        .map(|v| v.as_str().map(str::to_owned).ok_or_else(|| ContractError::args("`district` must be a string")))
        .transpose()?;
    Ok(Identity {
        id: IdentityId::of_key(&public_key),
        role,
        public_key,
        credential: Signature::from_value(args::get(args, "credential")?)?,
        district,
        label: args::str(args, "label")?.to_owned(),
    })
}

fn authority_key(ctx: &mut TxContext<'_>) -> Result<PublicKey, ContractError> {
    let authority = ctx.authority();
    ctx.identity(&authority)?
        .map(|i| i.public_key)
        .ok_or_else(|| ContractError::new(ErrorCode::Config, "authority not bootstrapped"))
}

fn bootstrap(ctx: &mut TxContext<'_>, a: &Value) -> Result<Value, ContractError> {
    ctx.require_role(Role::Authority)?;
    let identity = parse_registration(a)?;
    if identity.id != ctx.invoker() || identity.role != Role::Authority {
        return Err(ContractError::permission("bootstrap registers the invoking authority only"));
    }
    if !identity.credential_valid(&identity.public_key) {
        return Err(ContractError::new(ErrorCode::Validation, "credential does not verify"));
    }
    let key = state::identity_key(&identity.id);
    ctx.insert(&key, &identity.to_value(), identity.id, Acl::public())
        .map_err(|e| ContractError::new(ErrorCode::Duplicate, e.message))?;
    Ok(identity.id.into())
}

/// KYC registration: authority-only, one record per public key.
fn register(ctx: &mut TxContext<'_>, a: &Value) -> Result<Value, ContractError> {
    ctx.require_role(Role::Authority)?;
    let identity = parse_registration(a)?;
    if identity.role == Role::Authority {
        return Err(ContractError::new(ErrorCode::Validation, "exactly one authority per network"));
    }
    if !identity.credential_valid(&authority_key(ctx)?) {
        return Err(ContractError::new(ErrorCode::Validation, "credential not signed by the authority"));
    }
    let key = state::identity_key(&identity.id);
    if ctx.exists(&key) {
        return Err(ContractError::new(ErrorCode::Duplicate, format!("identity {} already registered", identity.id)));
    }
    ctx.insert(&key, &identity.to_value(), identity.id, Acl::public())?;
    Ok(identity.id.into())
}

pub fn identity_contract() -> Contract {
    Contract::new(IDENTITY, Category::Dynamic).op("bootstrap", bootstrap).op("register", register)
}

/// `readState`: permission-checked read. Denials fail the transaction, which
/// is still recorded.
fn data_read(ctx: &mut TxContext<'_>, a: &Value) -> Result<Value, ContractError> {
    let key = args::str(a, "key")?;
    match ctx.read(key)? {
        Some(bytes) => Ok(Value::map().with("value", bytes).build()),
        None => Err(ContractError::new(ErrorCode::NotFound, format!("`{key}` not found"))),
    }
}

fn data_write(ctx: &mut TxContext<'_>, a: &Value) -> Result<Value, ContractError> {
    let key = args::str(a, "key")?;
    if !key.starts_with(NS_DATA) {
        return Err(ContractError::permission(format!("`{key}` is managed by its own contract")));
    }
    ctx.write(key, args::bytes(a, "value")?.to_vec())?;
    Ok(Value::Null)
}

fn data_grant(ctx: &mut TxContext<'_>, a: &Value) -> Result<Value, ContractError> {
    let key = args::str(a, "key")?;
    if !key.starts_with(NS_DATA) {
        return Err(ContractError::permission(format!("`{key}` is managed by its own contract")));
    }
    let grantee = args::id(a, "grantee")?;
    let perms = Perms {
        read: args::get(a, "read")?.as_bool().unwrap_or(false),
        write: args::get(a, "write")?.as_bool().unwrap_or(false),
    };
    let mut acl = ctx
        .acl_of(key)
        .ok_or_else(|| ContractError::new(ErrorCode::NotFound, format!("`{key}` not found")))?;
    acl.grants.insert(grantee, perms);
    ctx.set_acl(key, acl)?;
    Ok(Value::Null)
}

pub fn data_contract() -> Contract {
    Contract::new(DATA, Category::Dynamic)
        .op("read", data_read)
        .op("write", data_write)
        .op("grant", data_grant)
}

fn consent_error(e: ConsentError) -> ContractError {
    match e {
        ConsentError::WrongActor { .. } => ContractError::permission(e.to_string()),
        ConsentError::IllegalTransition { .. } => ContractError::new(ErrorCode::ConsentState, e.to_string()),
        ConsentError::TimeTravel { .. } => ContractError::new(ErrorCode::Validation, e.to_string()),
    }
}

fn load_grants(ctx: &mut TxContext<'_>, subject: &IdentityId, reader: &IdentityId) -> Result<ConsentGrants, ContractError> {
    match ctx.read(&grant_key(subject, reader))? {
        Some(bytes) => Ok(ConsentGrants::decode(&bytes)?),
        None => Ok(ConsentGrants::default()),
    }
}

fn history_slot(status: ConsentStatus) -> u64 {
    match status {
        ConsentStatus::Requested => 1,
        ConsentStatus::Approved | ConsentStatus::Denied => 2,
        ConsentStatus::Revoked => 3,
    }
}

pub fn load_consent(ctx: &mut TxContext<'_>, consent_id: &Hash) -> Result<ConsentRecord, ContractError> {
    let bytes = ctx
        .read(&ConsentRecord::key(consent_id))?
        .ok_or_else(|| ContractError::new(ErrorCode::NotFound, format!("consent {consent_id} not found")))?;
    Ok(ConsentRecord::decode(&bytes)?)
}

/// Opens a consent request from the invoker to `subject` over `resource_prefix`.
/// The consent id is the request id of the invoking transaction.
pub fn open_request(
    ctx: &mut TxContext<'_>,
    subject: IdentityId,
    resource_prefix: &str,
    purpose: &str,
) -> Result<ConsentRecord, ContractError> {
    if resource_prefix.is_empty() || !resource_prefix.ends_with('/') {
        return Err(ContractError::args("resource prefix must end with `/`"));
    }
    let requester = ctx.invoker();
    if requester == subject {
        return Err(ContractError::new(ErrorCode::Validation, "cannot request consent from oneself"));
    }
    if ctx.identity(&subject)?.is_none() {
        return Err(ContractError::new(ErrorCode::NotFound, format!("subject {subject} not registered")));
    }
    // one open request per (subject, requester) pair
    if pair_records(ctx, &subject, &requester)?.iter().any(|r| r.status == ConsentStatus::Requested) {
        return Err(ContractError::new(
            ErrorCode::DuplicateRequest,
            format!("an open request from {requester} to {subject} already exists"),
        ));
    }
    let record = ConsentRecord {
        consent_id: ctx.request_id(),
        requester,
        subject,
        resource_key: resource_prefix.to_owned(),
        purpose: purpose.to_owned(),
        status: ConsentStatus::Requested,
        requested_at: ctx.logical_time(),
        decided_at: None,
    };
    let acl = Acl::private().with(requester, Perms::READ);
    let value = record.to_value();
    ctx.insert(&ConsentRecord::key(&record.consent_id), &value, subject, acl.clone())?;
    ctx.insert(&ConsentRecord::history_key(&record.consent_id, 1), &value, subject, acl.clone())?;
    ctx.insert(&pair_index_key(&subject, &requester, &record.consent_id), &Value::Null, subject, acl)?;
    ctx.emit(
        "consent/request",
        &Value::map()
            .with("consentId", record.consent_id)
            .with("purpose", purpose)
            .with("requester", requester)
            .with("resourceKey", resource_prefix)
            .with("to", subject)
            .build(),
    )?;
    Ok(record)
}

/// Index entry per (subject, requester, consent); never modified.
pub fn pair_index_key(subject: &IdentityId, requester: &IdentityId, consent_id: &Hash) -> String {
    format!("consent/pair/{}/{}/{}", subject.to_hex(), requester.to_hex(), consent_id.to_hex())
}

/// All consent records between `subject` and `requester`, oldest id first.
pub fn pair_records(
    ctx: &mut TxContext<'_>,
    subject: &IdentityId,
    requester: &IdentityId,
) -> Result<Vec<ConsentRecord>, ContractError> {
    let prefix = format!("consent/pair/{}/{}/", subject.to_hex(), requester.to_hex());
    let mut out = Vec::new();
    for key in ctx.scan_keys(&prefix) {
        let id: Hash = key[prefix.len()..]
            .parse()
            .map_err(|_| ContractError::new(ErrorCode::Validation, "malformed consent index"))?;
        out.push(load_consent(ctx, &id)?);
    }
    Ok(out)
}

/// `recordConsentTransition`: applies a status change by `ctx.invoker()`,
/// keeping the previous versions under history keys and maintaining the
/// (subject, requester) grant index.
pub fn transition(ctx: &mut TxContext<'_>, consent_id: &Hash, next: ConsentStatus) -> Result<ConsentRecord, ContractError> {
    let current = load_consent(ctx, consent_id)?;
    let updated = current.transition(next, &ctx.invoker(), ctx.logical_time()).map_err(consent_error)?;
    let value = updated.to_value();
    ctx.write_value(&ConsentRecord::key(consent_id), &value)?;
    let acl = Acl::private().with(updated.requester, Perms::READ);
    ctx.insert(&ConsentRecord::history_key(consent_id, history_slot(next)), &value, updated.subject, acl)?;

    let mut grants = load_grants(ctx, &updated.subject, &updated.requester)?;
    match next {
        ConsentStatus::Approved => grants.granted.push((updated.resource_key.clone(), *consent_id)),
        ConsentStatus::Revoked => grants.granted.retain(|(_, id)| id != consent_id),
        ConsentStatus::Denied | ConsentStatus::Requested => {}
    }
    if next == ConsentStatus::Approved || next == ConsentStatus::Revoked {
        let key = grant_key(&updated.subject, &updated.requester);
        if ctx.exists(&key) {
            ctx.write(&key, grants.encode())?;
        } else {
            ctx.insert(&key, &grants.to_value(), updated.subject, Acl::private())?;
        }
    }
    ctx.emit(
        "consent/decision",
        &Value::map()
            .with("consentId", *consent_id)
            .with("status", next.as_str())
            .with("to", updated.requester)
            .build(),
    )?;
    Ok(updated)
}

fn consent_request(ctx: &mut TxContext<'_>, a: &Value) -> Result<Value, ContractError> {
    let record = open_request(ctx, args::id(a, "subject")?, args::str(a, "resourcePrefix")?, args::str(a, "purpose")?)?;
    Ok(record.to_value())
}

fn consent_decide(ctx: &mut TxContext<'_>, a: &Value) -> Result<Value, ContractError> {
    let next = match args::str(a, "decision")? {
        "approve" => ConsentStatus::Approved,
        "deny" => ConsentStatus::Denied,
        other => return Err(ContractError::args(format!("decision `{other}` is not approve|deny"))),
    };
    Ok(transition(ctx, &args::hash(a, "consentId")?, next)?.to_value())
}

fn consent_revoke(ctx: &mut TxContext<'_>, a: &Value) -> Result<Value, ContractError> {
    Ok(transition(ctx, &args::hash(a, "consentId")?, ConsentStatus::Revoked)?.to_value())
}

pub fn consent_contract() -> Contract {
    Contract::new(CONSENT, Category::Dynamic)
        .op("request", consent_request)
        .op("decide", consent_decide)
        .op("revoke", consent_revoke)
}

/// Stores a named, world-readable configuration value under `config/`.
fn configure(ctx: &mut TxContext<'_>, a: &Value) -> Result<Value, ContractError> {
    ctx.require_role(Role::Authority)?;
    let name = args::str(a, "name")?;
    let key = format!("{NS_CONFIG}{name}");
    let value = args::get(a, "value")?;
    if ctx.exists(&key) {
        ctx.write_value(&key, value)?;
    } else {
        ctx.insert(&key, value, ctx.invoker(), Acl::public())?;
    }
    Ok(Value::Null)
}

pub fn system_contract() -> Contract {
    Contract::new(SYSTEM, Category::Dynamic).op("configure", configure)
}

/// Reads `config/<name>`, if set.
pub fn read_config(ctx: &mut TxContext<'_>, name: &str) -> Result<Option<Value>, ContractError> {
    ctx.read_value(&format!("{NS_CONFIG}{name}"))
}
