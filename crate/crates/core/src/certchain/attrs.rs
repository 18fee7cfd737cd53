use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

const TAG_STR: u8 = 0x01;
const TAG_INT: u8 = 0x02;
const TAG_BOOL: u8 = 0x03;
const TAG_BYTES: u8 = 0x04;

/// Value of a single certificate attribute.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum AttrValue {
    Str(String),
    Int(i64),
    Bool(bool),
    Bytes(Vec<u8>),
}

impl AttrValue {
    pub fn as_str(&self) -> Option<&str> {
        match self {
            AttrValue::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            AttrValue::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            AttrValue::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_bytes(&self) -> Option<&[u8]> {
        match self {
            AttrValue::Bytes(b) => Some(b),
            _ => None,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            AttrValue::Str(_) => "string",
            AttrValue::Int(_) => "int",
            AttrValue::Bool(_) => "bool",
            AttrValue::Bytes(_) => "bytes",
        }
    }
}

impl fmt::Display for AttrValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttrValue::Str(s) => write!(f, "{s:?}"),
            AttrValue::Int(i) => write!(f, "{i}"),
            AttrValue::Bool(b) => write!(f, "{b}"),
            AttrValue::Bytes(b) => write!(f, "0x{}", hex::encode(b)),
        }
    }
}

impl From<&str> for AttrValue {
    fn from(s: &str) -> Self {
        AttrValue::Str(s.to_string())
    }
}

impl From<String> for AttrValue {
    fn from(s: String) -> Self {
        AttrValue::Str(s)
    }
}

impl From<i64> for AttrValue {
    fn from(i: i64) -> Self {
        AttrValue::Int(i)
    }
}

impl From<bool> for AttrValue {
    fn from(b: bool) -> Self {
        AttrValue::Bool(b)
    }
}

impl From<Vec<u8>> for AttrValue {
    fn from(b: Vec<u8>) -> Self {
        AttrValue::Bytes(b)
    }
}

/// Attribute map. `BTreeMap<String, _>` iterates in bytewise name order,
/// which is exactly the canonical order.
pub type AttrMap = BTreeMap<String, AttrValue>;

/// Builds an [`AttrMap`] from `name => value` pairs.
#[macro_export]
macro_rules! attrs {
    () => { $crate::certchain::AttrMap::new() };
    ($($name:expr => $value:expr),+ $(,)?) => {{
        let mut m = $crate::certchain::AttrMap::new();
        $( m.insert(($name).to_string(), $crate::certchain::AttrValue::from($value)); )+
        m
    }};
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("truncated encoding at byte {0}")]
    Truncated(usize),
    #[error("unknown type tag {tag:#04x} at byte {offset}")]
    UnknownTag { tag: u8, offset: usize },
    #[error("attribute name at byte {0} is not valid UTF-8")]
    BadName(usize),
    #[error("string value of `{0}` is not valid UTF-8")]
    BadString(String),
    #[error("invalid boolean byte for `{0}`")]
    BadBool(String),
    #[error("attribute `{0}` is out of canonical order or duplicated")]
    NotCanonical(String),
    #[error("attribute `{name}` has kind {found}, expected {expected}")]
    WrongKind {
        name: String,
        expected: &'static str,
        found: &'static str,
    },
    #[error("{0}")]
    Invalid(String),
}

fn put_len(out: &mut Vec<u8>, len: usize) {
    let len = u32::try_from(len).expect("attribute longer than 4 GiB");
    out.extend_from_slice(&len.to_be_bytes());
}

/// Deterministic encoding of an attribute map: entries in ascending
/// bytewise name order, each `tag | u32 name len | name | value`.
pub fn canonical_encode(attrs: &AttrMap) -> Vec<u8> {
    let mut out = Vec::new();
    for (name, value) in attrs {
        let tag = match value {
            AttrValue::Str(_) => TAG_STR,
            AttrValue::Int(_) => TAG_INT,
            AttrValue::Bool(_) => TAG_BOOL,
            AttrValue::Bytes(_) => TAG_BYTES,
        };
        out.push(tag);
        put_len(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        match value {
            AttrValue::Str(s) => {
                put_len(&mut out, s.len());
                out.extend_from_slice(s.as_bytes());
            }
            AttrValue::Int(i) => out.extend_from_slice(&i.to_be_bytes()),
            AttrValue::Bool(b) => out.push(u8::from(*b)),
            AttrValue::Bytes(b) => {
                put_len(&mut out, b.len());
                out.extend_from_slice(b);
            }
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(CodecError::Truncated(self.pos))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, CodecError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

/// Inverse of [`canonical_encode`]. Rejects anything `canonical_encode`
/// could not have produced, so decode/encode is bit-exact.
pub fn canonical_decode(bytes: &[u8]) -> Result<AttrMap, CodecError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let mut out = AttrMap::new();
    while r.pos < bytes.len() {
        let tag_offset = r.pos;
        let tag = r.take(1)?[0];
        let name_offset = r.pos;
        let name_len = r.u32()?;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| CodecError::BadName(name_offset))?
            .to_string();
        let value = match tag {
            TAG_STR => {
                let len = r.u32()?;
                let s = std::str::from_utf8(r.take(len)?)
                    .map_err(|_| CodecError::BadString(name.clone()))?;
                AttrValue::Str(s.to_string())
            }
            TAG_INT => {
                let b = r.take(8)?;
                AttrValue::Int(i64::from_be_bytes(b.try_into().unwrap()))
            }
            TAG_BOOL => match r.take(1)?[0] {
                0 => AttrValue::Bool(false),
                1 => AttrValue::Bool(true),
                _ => return Err(CodecError::BadBool(name)),
            },
            TAG_BYTES => {
                let len = r.u32()?;
                AttrValue::Bytes(r.take(len)?.to_vec())
            }
            tag => {
                return Err(CodecError::UnknownTag {
                    tag,
                    offset: tag_offset,
                })
            }
        };
        if let Some((last, _)) = out.last_key_value() {
            if last.as_bytes() >= name.as_bytes() {
                return Err(CodecError::NotCanonical(name));
            }
        }
        out.insert(name, value);
    }
    Ok(out)
}

/// Typed attribute accessors shared by certificates, requests and stored records.
pub(crate) fn get_str<'a>(attrs: &'a AttrMap, name: &str) -> Result<Option<&'a str>, CodecError> {
    match attrs.get(name) {
        None => Ok(None),
        Some(AttrValue::Str(s)) => Ok(Some(s)),
        Some(other) => Err(CodecError::WrongKind {
            name: name.to_string(),
            expected: "string",
            found: other.kind(),
        }),
    }
}

pub(crate) fn get_int(attrs: &AttrMap, name: &str) -> Result<Option<i64>, CodecError> {
    match attrs.get(name) {
        None => Ok(None),
        Some(AttrValue::Int(i)) => Ok(Some(*i)),
        Some(other) => Err(CodecError::WrongKind {
            name: name.to_string(),
            expected: "int",
            found: other.kind(),
        }),
    }
}

pub(crate) fn get_bytes<'a>(attrs: &'a AttrMap, name: &str) -> Result<Option<&'a [u8]>, CodecError> {
    match attrs.get(name) {
        None => Ok(None),
        Some(AttrValue::Bytes(b)) => Ok(Some(b)),
        Some(other) => Err(CodecError::WrongKind {
            name: name.to_string(),
            expected: "bytes",
            found: other.kind(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_map_encodes_empty() {
        assert!(canonical_encode(&AttrMap::new()).is_empty());
    }

    #[test]
    fn single_bool() {
        let m = attrs! { "a" => true };
        assert_eq!(canonical_encode(&m), vec![0x03, 0, 0, 0, 1, b'a', 0x01]);
    }

    #[test]
    fn insertion_order_does_not_matter() {
        let mut m1 = AttrMap::new();
        m1.insert("b".into(), AttrValue::Int(1));
        m1.insert("a".into(), AttrValue::from("x"));
        let mut m2 = AttrMap::new();
        m2.insert("a".into(), AttrValue::from("x"));
        m2.insert("b".into(), AttrValue::Int(1));
        assert_eq!(canonical_encode(&m1), canonical_encode(&m2));
    }

    #[test]
    fn int_is_big_endian_twos_complement() {
        let m = attrs! { "n" => -2i64 };
        assert_eq!(
            canonical_encode(&m),
            vec![0x02, 0, 0, 0, 1, b'n', 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xfe]
        );
    }

    #[test]
    fn decode_rejects_unsorted() {
        let mut bytes = canonical_encode(&attrs! { "b" => 1i64 });
        bytes.extend(canonical_encode(&attrs! { "a" => 1i64 }));
        assert_eq!(
            canonical_decode(&bytes),
            Err(CodecError::NotCanonical("a".into()))
        );
    }

    #[test]
    fn decode_rejects_duplicates_and_bad_tags() {
        let one = canonical_encode(&attrs! { "a" => 1i64 });
        let mut dup = one.clone();
        dup.extend(&one);
        assert!(matches!(
            canonical_decode(&dup),
            Err(CodecError::NotCanonical(_))
        ));
        let mut bad = one.clone();
        bad[0] = 0x09;
        assert!(matches!(
            canonical_decode(&bad),
            Err(CodecError::UnknownTag { tag: 0x09, .. })
        ));
        assert!(matches!(
            canonical_decode(&one[..one.len() - 1]),
            Err(CodecError::Truncated(_))
        ));
    }

    fn value_strategy() -> impl Strategy<Value = AttrValue> {
        prop_oneof![
            ".{0,12}".prop_map(AttrValue::Str),
            any::<i64>().prop_map(AttrValue::Int),
            any::<bool>().prop_map(AttrValue::Bool),
            proptest::collection::vec(any::<u8>(), 0..12).prop_map(AttrValue::Bytes),
        ]
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(m in proptest::collection::btree_map(".{0,8}", value_strategy(), 0..8)) {
            let bytes = canonical_encode(&m);
            prop_assert_eq!(canonical_decode(&bytes).unwrap(), m);
        }
    }
}
