//! Deterministic binary encoding used for every hashed or signed structure.
//!
//! Layout, one tag byte followed by the payload:
//!
//! | tag  | kind   | payload                                             |
//! |------|--------|-----------------------------------------------------|
//! | 0x00 | null   | none                                                |
//! | 0x01 | bool   | 1 byte, 0x00 or 0x01                                |
//! | 0x02 | int    | 8 bytes, big-endian two's complement                |
//! | 0x03 | string | u32 BE byte length, UTF-8 bytes                     |
//! | 0x04 | bytes  | u32 BE length, raw bytes                            |
//! | 0x05 | list   | u32 BE item count, items                            |
//! | 0x06 | map    | u32 BE entry count, (string key, value) pairs       |
//!
//! Map keys are emitted in ascending byte order. The decoder rejects anything
//! the encoder would not have produced (unsorted or duplicate keys, non-0/1
//! booleans, trailing bytes), so every value has exactly one encoding.

use std::collections::BTreeMap;

use thiserror::Error;

const TAG_NULL: u8 = 0x00;
const TAG_BOOL: u8 = 0x01;
const TAG_INT: u8 = 0x02;
const TAG_STR: u8 = 0x03;
const TAG_BYTES: u8 = 0x04;
const TAG_LIST: u8 = 0x05;
const TAG_MAP: u8 = 0x06;

/// Nesting limit for decoding untrusted input.
const MAX_DEPTH: usize = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("unsupported value: {0}")]
    Unsupported(String),
    #[error("length {0} exceeds u32 range")]
    TooLong(usize),
    #[error("unexpected end of input at offset {0}")]
    Truncated(usize),
    #[error("unknown tag 0x{tag:02x} at offset {offset}")]
    UnknownTag { tag: u8, offset: usize },
    #[error("non-canonical encoding at offset {offset}: {reason}")]
    NonCanonical { offset: usize, reason: &'static str },
    #[error("invalid utf-8 at offset {0}")]
    Utf8(usize),
    #[error("{0} trailing bytes")]
    Trailing(usize),
    #[error("nesting deeper than {MAX_DEPTH}")]
    TooDeep,
    #[error("field `{field}`: {reason}")]
    Shape { field: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Value {
    Null,
    Bool(bool),
    Int(i64),
    Str(String),
    Bytes(Vec<u8>),
    List(Vec<Value>),
    Map(BTreeMap<String, Value>),
}

impl Value {
    pub fn map() -> MapBuilder {
        MapBuilder::default()
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Value::Null => "null",
            Value::Bool(_) => "bool",
            Value::Int(_) => "int",
            Value::Str(_) => "string",
            Value::Bytes(_) => "bytes",
            Value::List(_) => "list",
            Value::Map(_) => "map",
        }
    }

    pub fn as_map(&self) -> Option<&BTreeMap<String, Value>> {
        match self {
            Value::Map(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_bytes(&self) -> Option<&[u8]> {
        match self {
            Value::Bytes(b) => Some(b),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[Value]> {
        match self {
            Value::List(l) => Some(l),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    /// Field lookup on a map value; `None` for missing keys and non-maps.
    pub fn get(&self, key: &str) -> Option<&Value> {
        self.as_map().and_then(|m| m.get(key))
    }

    pub fn encode(&self) -> Result<Vec<u8>, CodecError> {
        let mut out = Vec::new();
        encode_into(self, &mut out)?;
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Value, CodecError> {
        let mut reader = Reader { buf: bytes, pos: 0 };
        let value = reader.value(0)?;
        if reader.pos != bytes.len() {
            return Err(CodecError::Trailing(bytes.len() - reader.pos));
        }
        Ok(value)
    }

    /// Converts JSON into a canonical value. Floats have no canonical form
    /// here and are rejected; decimals travel as strings.
    pub fn from_json(json: &serde_json::Value) -> Result<Value, CodecError> {
        Ok(match json {
            serde_json::Value::Null => Value::Null,
            serde_json::Value::Bool(b) => Value::Bool(*b),
            serde_json::Value::Number(n) => match n.as_i64() {
                Some(i) => Value::Int(i),
                None => return Err(CodecError::Unsupported(format!("number {n}"))),
            },
            serde_json::Value::String(s) => Value::Str(s.clone()),
            serde_json::Value::Array(items) => {
                Value::List(items.iter().map(Value::from_json).collect::<Result<_, _>>()?)
            }
            serde_json::Value::Object(obj) => Value::Map(
                obj.iter()
                    .map(|(k, v)| Ok((k.clone(), Value::from_json(v)?)))
                    .collect::<Result<_, CodecError>>()?,
            ),
        })
    }

    /// JSON view for reports and debugging. Byte strings render as lowercase hex.
    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Value::Null => serde_json::Value::Null,
            Value::Bool(b) => serde_json::Value::Bool(*b),
            Value::Int(i) => serde_json::Value::from(*i),
            Value::Str(s) => serde_json::Value::String(s.clone()),
            Value::Bytes(b) => serde_json::Value::String(hex::encode(b)),
            Value::List(l) => serde_json::Value::Array(l.iter().map(Value::to_json).collect()),
            Value::Map(m) => serde_json::Value::Object(
                m.iter().map(|(k, v)| (k.clone(), v.to_json())).collect(),
            ),
        }
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Str(v.to_owned())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Str(v)
    }
}

impl From<Vec<u8>> for Value {
    fn from(v: Vec<u8>) -> Self {
        Value::Bytes(v)
    }
}

impl From<Vec<Value>> for Value {
    fn from(v: Vec<Value>) -> Self {
        Value::List(v)
    }
}

impl<T: Into<Value>> From<Option<T>> for Value {
    fn from(v: Option<T>) -> Self {
        v.map_or(Value::Null, Into::into)
    }
}

#[derive(Debug, Default)]
pub struct MapBuilder(BTreeMap<String, Value>);

impl MapBuilder {
    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.0.insert(key.to_owned(), value.into());
        self
    }

    pub fn build(self) -> Value {
        Value::Map(self.0)
    }
}

fn write_len(len: usize, out: &mut Vec<u8>) -> Result<(), CodecError> {
    let len = u32::try_from(len).map_err(|_| CodecError::TooLong(len))?;
    out.extend_from_slice(&len.to_be_bytes());
    Ok(())
}

fn encode_into(value: &Value, out: &mut Vec<u8>) -> Result<(), CodecError> {
    match value {
        Value::Null => out.push(TAG_NULL),
        Value::Bool(b) => {
            out.push(TAG_BOOL);
            out.push(u8::from(*b));
        }
        Value::Int(i) => {
            out.push(TAG_INT);
            out.extend_from_slice(&i.to_be_bytes());
        }
        Value::Str(s) => {
            out.push(TAG_STR);
            write_len(s.len(), out)?;
            out.extend_from_slice(s.as_bytes());
        }
        Value::Bytes(b) => {
            out.push(TAG_BYTES);
            write_len(b.len(), out)?;
            out.extend_from_slice(b);
        }
        Value::List(items) => {
            out.push(TAG_LIST);
            write_len(items.len(), out)?;
            for item in items {
                encode_into(item, out)?;
            }
        }
        Value::Map(entries) => {
            out.push(TAG_MAP);
            write_len(entries.len(), out)?;
            // BTreeMap<String, _> iterates in byte order of the keys.
            for (k, v) in entries {
                write_len(k.len(), out)?;
                out.extend_from_slice(k.as_bytes());
                encode_into(v, out)?;
            }
        }
    }
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(CodecError::Truncated(self.pos)),
        }
    }

    fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    fn len(&mut self) -> Result<usize, CodecError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string(&mut self) -> Result<String, CodecError> {
        let start = self.pos;
        let n = self.len()?;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| CodecError::Utf8(start))
    }

    fn value(&mut self, depth: usize) -> Result<Value, CodecError> {
        if depth > MAX_DEPTH {
            return Err(CodecError::TooDeep);
        }
        let offset = self.pos;
        let tag = self.u8()?;
        Ok(match tag {
            TAG_NULL => Value::Null,
            TAG_BOOL => match self.u8()? {
                0 => Value::Bool(false),
                1 => Value::Bool(true),
                _ => {
                    return Err(CodecError::NonCanonical { offset, reason: "boolean byte not 0 or 1" })
                }
            },
            TAG_INT => {
                let b = self.take(8)?;
                Value::Int(i64::from_be_bytes(b.try_into().expect("8 bytes")))
            }
            TAG_STR => Value::Str(self.string()?),
            TAG_BYTES => {
                let n = self.len()?;
                Value::Bytes(self.take(n)?.to_vec())
            }
            TAG_LIST => {
                let n = self.len()?;
                // Every item needs at least one byte; bail before allocating absurd sizes.
                if n > self.buf.len() - self.pos {
                    return Err(CodecError::Truncated(self.pos));
                }
                let mut items = Vec::with_capacity(n);
                for _ in 0..n {
                    items.push(self.value(depth + 1)?);
                }
                Value::List(items)
            }
            TAG_MAP => {
                let n = self.len()?;
                let mut entries = BTreeMap::new();
                let mut prev: Option<String> = None;
                for _ in 0..n {
                    let key_offset = self.pos;
                    let key = self.string()?;
                    if prev.as_deref().is_some_and(|p| p.as_bytes() >= key.as_bytes()) {
                        return Err(CodecError::NonCanonical {
                            offset: key_offset,
                            reason: "map keys not strictly ascending",
                        });
                    }
                    let v = self.value(depth + 1)?;
                    prev = Some(key.clone());
                    entries.insert(key, v);
                }
                Value::Map(entries)
            }
            tag => return Err(CodecError::UnknownTag { tag, offset }),
        })
    }
}

/// Typed field access for decoding structs out of map values.
pub(crate) struct Fields<'a> {
    map: &'a BTreeMap<String, Value>,
    ctx: &'static str,
}

impl<'a> Fields<'a> {
    pub(crate) fn new(value: &'a Value, ctx: &'static str) -> Result<Self, CodecError> {
        match value {
            Value::Map(map) => Ok(Fields { map, ctx }),
            other => Err(CodecError::Shape {
                field: ctx.to_owned(),
                reason: format!("expected map, found {}", other.kind()),
            }),
        }
    }

    /// Rejects unknown keys so that no bytes escape the hashed schema.
    pub(crate) fn exact(self, keys: &[&str]) -> Result<Self, CodecError> {
        if let Some(extra) = self.map.keys().find(|k| !keys.contains(&k.as_str())) {
            return Err(self.err(extra, "unexpected field"));
        }
        Ok(self)
    }

    fn err(&self, field: &str, reason: &str) -> CodecError {
        CodecError::Shape { field: format!("{}.{}", self.ctx, field), reason: reason.to_owned() }
    }

    pub(crate) fn get(&self, key: &str) -> Result<&'a Value, CodecError> {
        self.map.get(key).ok_or_else(|| self.err(key, "missing"))
    }

    pub(crate) fn int(&self, key: &str) -> Result<i64, CodecError> {
        self.get(key)?.as_int().ok_or_else(|| self.err(key, "expected int"))
    }

    pub(crate) fn uint(&self, key: &str) -> Result<u64, CodecError> {
        u64::try_from(self.int(key)?).map_err(|_| self.err(key, "expected non-negative int"))
    }

    pub(crate) fn str(&self, key: &str) -> Result<&'a str, CodecError> {
        self.get(key)?.as_str().ok_or_else(|| self.err(key, "expected string"))
    }

    pub(crate) fn bytes(&self, key: &str) -> Result<&'a [u8], CodecError> {
        self.get(key)?.as_bytes().ok_or_else(|| self.err(key, "expected bytes"))
    }

    pub(crate) fn list(&self, key: &str) -> Result<&'a [Value], CodecError> {
        self.get(key)?.as_list().ok_or_else(|| self.err(key, "expected list"))
    }

    pub(crate) fn array<const N: usize>(&self, key: &str) -> Result<[u8; N], CodecError> {
        self.bytes(key)?
            .try_into()
            .map_err(|_| self.err(key, &format!("expected {N} bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn map_key_order_does_not_matter() {
        let a = Value::map().with("b", 1i64).with("a", 2i64).build();
        let b = Value::map().with("a", 2i64).with("b", 1i64).build();
        assert_eq!(a.encode().unwrap(), b.encode().unwrap());
    }

    #[test]
    fn empty_map_bytes_are_fixed() {
        assert_eq!(Value::map().build().encode().unwrap(), vec![TAG_MAP, 0, 0, 0, 0]);
    }

    #[test]
    fn integers_are_fixed_width_big_endian() {
        assert_eq!(
            Value::Int(258).encode().unwrap(),
            vec![TAG_INT, 0, 0, 0, 0, 0, 0, 1, 2]
        );
        assert_eq!(Value::Int(-1).encode().unwrap()[1..], [0xff; 8]);
    }

    #[test]
    fn decoder_rejects_non_canonical_input() {
        // keys out of order
        let mut bad = vec![TAG_MAP, 0, 0, 0, 2];
        for k in ["b", "a"] {
            bad.extend_from_slice(&[0, 0, 0, 1]);
            bad.extend_from_slice(k.as_bytes());
            bad.push(TAG_NULL);
        }
        assert!(matches!(Value::decode(&bad), Err(CodecError::NonCanonical { .. })));

        assert!(matches!(
            Value::decode(&[TAG_BOOL, 2]),
            Err(CodecError::NonCanonical { .. })
        ));
        assert_eq!(Value::decode(&[TAG_NULL, 0]), Err(CodecError::Trailing(1)));
        assert!(matches!(Value::decode(&[0x7f]), Err(CodecError::UnknownTag { .. })));
        assert!(matches!(Value::decode(&[TAG_STR, 0, 0, 0, 9, b'a']), Err(CodecError::Truncated(_))));
        assert!(matches!(Value::decode(&[TAG_LIST, 0xff, 0xff, 0xff, 0xff]), Err(CodecError::Truncated(_))));
    }

    #[test]
    fn json_floats_are_unsupported() {
        let j: serde_json::Value = serde_json::from_str(r#"{"a": 1.5}"#).unwrap();
        assert!(matches!(Value::from_json(&j), Err(CodecError::Unsupported(_))));
        let j: serde_json::Value = serde_json::from_str(r#"{"a": [1, "x", null, true]}"#).unwrap();
        let v = Value::from_json(&j).unwrap();
        assert_eq!(v.to_json(), j);
    }

    fn arb_value() -> impl Strategy<Value = Value> {
        let leaf = prop_oneof![
            Just(Value::Null),
            any::<bool>().prop_map(Value::Bool),
            any::<i64>().prop_map(Value::Int),
            ".{0,12}".prop_map(Value::Str),
            proptest::collection::vec(any::<u8>(), 0..16).prop_map(Value::Bytes),
        ];
        leaf.prop_recursive(4, 48, 6, |inner| {
            prop_oneof![
                proptest::collection::vec(inner.clone(), 0..6).prop_map(Value::List),
                proptest::collection::btree_map(".{0,6}", inner, 0..6).prop_map(Value::Map),
            ]
        })
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(v in arb_value()) {
            let bytes = v.encode().unwrap();
            prop_assert_eq!(Value::decode(&bytes).unwrap(), v.clone());
            prop_assert_eq!(v.encode().unwrap(), bytes);
        }
    }
}
