//! Certificates, heritages and their canonical encodings.

mod armor;
mod attrs;
mod cert;
mod keys;

pub use armor::{
    armor, begin_line, dearmor, decode_heritage, decode_request, encode_certificate,
    encode_heritage, encode_request, end_line, ArmorError, CERT_LABEL, REQUEST_LABEL,
};
pub use attrs::{canonical_decode, canonical_encode, AttrMap, AttrValue, CodecError};
pub(crate) use attrs::{get_bytes, get_int, get_str};
pub use cert::*;
pub use keys::{KeyError, KeyPair, PublicKey};
