//! SHA-256 digests, Ed25519 keys and signatures.

use std::fmt;
use std::str::FromStr;

use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::codec::{CodecError, Fields, Value};

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Hash(pub [u8; 32]);

impl Hash {
    pub const ZERO: Hash = Hash([0; 32]);

    pub fn digest(data: &[u8]) -> Hash {
        Hash(Sha256::digest(data).into())
    }

    /// Digest of the canonical encoding of `value`.
    pub fn of_value(value: &Value) -> Result<Hash, CodecError> {
        Ok(Hash::digest(&value.encode()?))
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn short(&self) -> String {
        hex::encode(&self.0[..6])
    }
}

impl fmt::Display for Hash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for Hash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Hash({})", self.short())
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("expected 64 lowercase hex characters")]
pub struct ParseHashError;

impl FromStr for Hash {
    type Err = ParseHashError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.len() != 64 || s.bytes().any(|b| b.is_ascii_uppercase()) {
            return Err(ParseHashError);
        }
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).map_err(|_| ParseHashError)?;
        Ok(Hash(out))
    }
}

impl Serialize for Hash {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Hash {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl From<Hash> for Value {
    fn from(h: Hash) -> Value {
        Value::Bytes(h.0.to_vec())
    }
}

/// A principal, named by the SHA-256 of its Ed25519 public key.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct IdentityId(pub Hash);

impl IdentityId {
    pub fn of_key(key: &PublicKey) -> IdentityId {
        IdentityId(Hash::digest(key.as_bytes()))
    }

    pub fn to_hex(&self) -> String {
        self.0.to_hex()
    }
}

impl fmt::Display for IdentityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl fmt::Debug for IdentityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Id({})", self.0.short())
    }
}

impl FromStr for IdentityId {
    type Err = ParseHashError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse().map(IdentityId)
    }
}

impl From<IdentityId> for Value {
    fn from(id: IdentityId) -> Value {
        id.0.into()
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct PublicKey(pub [u8; 32]);

impl PublicKey {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn verify(&self, message: &[u8], signature: &[u8; 64]) -> bool {
        let Ok(key) = VerifyingKey::from_bytes(&self.0) else {
            return false;
        };
        let sig = ed25519_dalek::Signature::from_bytes(signature);
        key.verify_strict(message, &sig).is_ok()
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", hex::encode(&self.0[..6]))
    }
}

impl From<PublicKey> for Value {
    fn from(k: PublicKey) -> Value {
        Value::Bytes(k.0.to_vec())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature {
    pub bytes: [u8; 64],
    pub signer: IdentityId,
}

impl Signature {
    pub fn verify(&self, key: &PublicKey, message: &[u8]) -> bool {
        IdentityId::of_key(key) == self.signer && key.verify(message, &self.bytes)
    }

    pub fn to_value(&self) -> Value {
        Value::map()
            .with("bytes", self.bytes.to_vec())
            .with("signer", self.signer)
            .build()
    }

    pub fn from_value(value: &Value) -> Result<Signature, CodecError> {
        let f = Fields::new(value, "signature")?.exact(&["bytes", "signer"])?;
        Ok(Signature { bytes: f.array("bytes")?, signer: IdentityId(Hash(f.array("signer")?)) })
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({:?}, {})", self.signer, hex::encode(&self.bytes[..6]))
    }
}

/// An Ed25519 signing key together with its derived identity.
#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
    public: PublicKey,
    id: IdentityId,
}

impl KeyPair {
    pub fn from_seed(seed: [u8; 32]) -> KeyPair {
        let signing = SigningKey::from_bytes(&seed);
        let public = PublicKey(signing.verifying_key().to_bytes());
        KeyPair { id: IdentityId::of_key(&public), signing, public }
    }

    /// Reproducible key derived from a run seed and a label. Simulation only.
    pub fn derive(run_seed: u64, label: &str) -> KeyPair {
        let mut h = Sha256::new();
        h.update(b"egsl/key/v1");
        h.update(run_seed.to_be_bytes());
        h.update(label.as_bytes());
        KeyPair::from_seed(h.finalize().into())
    }

    pub fn id(&self) -> IdentityId {
        self.id
    }

    pub fn public(&self) -> PublicKey {
        self.public
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        Signature { bytes: self.signing.sign(message).to_bytes(), signer: self.id }
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyPair({:?})", self.id)
    }
}
