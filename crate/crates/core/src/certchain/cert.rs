use std::fmt;
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};
use thiserror::Error;

use super::attrs::{canonical_decode, canonical_encode, get_int, get_str, AttrMap, AttrValue, CodecError};
use super::keys::{KeyError, KeyPair, PublicKey};

pub const ATTR_PUBKEY: &str = "pubkey";
pub const ATTR_ISSUER_PUBKEY: &str = "issuerPubkey";
pub const ATTR_RIGHTS: &str = "rights";
pub const ATTR_PLENGTH: &str = "pLength";
pub const ATTR_SERIAL: &str = "serial";
pub const ATTR_SUBJECT_NAME: &str = "subjectName";
pub const ATTR_ISSUER_NAME: &str = "issuerName";
pub const ATTR_NOT_BEFORE: &str = "notBefore";
pub const ATTR_NOT_AFTER: &str = "notAfter";
pub const ATTR_OBJECT_ID: &str = "objectId";
pub const ATTR_VERSION: &str = "version";

pub const ATTR_TYPE: &str = "type";
pub const ATTR_SIGNER_PUBKEY: &str = "signerPubkey";
pub const ATTR_NONCE: &str = "nonce";
pub const ATTR_TIMESTAMP: &str = "timestamp";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CertError {
    #[error("missing required attribute `{0}`")]
    MissingAttribute(&'static str),
    #[error(transparent)]
    Attribute(#[from] CodecError),
    #[error(transparent)]
    Key(#[from] KeyError),
    #[error("issuerPubkey does not match the signing key")]
    IssuerMismatch,
    #[error("signerPubkey does not match the signing key")]
    SignerMismatch,
    #[error("attribute `{0}` must be non-negative")]
    Negative(&'static str),
    #[error("a heritage holds at least one certificate")]
    EmptyHeritage,
    #[error("truncated signed encoding")]
    Truncated,
}

pub fn unix_now() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs() as i64)
        .unwrap_or(0)
}

fn require_str(attrs: &AttrMap, name: &'static str) -> Result<(), CertError> {
    get_str(attrs, name)?.ok_or(CertError::MissingAttribute(name))?;
    Ok(())
}

fn require_key(attrs: &AttrMap, name: &'static str) -> Result<PublicKey, CertError> {
    let hex = get_str(attrs, name)?.ok_or(CertError::MissingAttribute(name))?;
    Ok(PublicKey::from_hex(hex)?)
}

fn check_non_negative(attrs: &AttrMap, name: &'static str) -> Result<(), CertError> {
    match get_int(attrs, name)? {
        Some(v) if v < 0 => Err(CertError::Negative(name)),
        _ => Ok(()),
    }
}

/// Required and well-typed attributes of a delegation certificate.
fn check_cert_attrs(attrs: &AttrMap) -> Result<(), CertError> {
    require_key(attrs, ATTR_PUBKEY)?;
    require_key(attrs, ATTR_ISSUER_PUBKEY)?;
    require_str(attrs, ATTR_RIGHTS)?;
    require_str(attrs, ATTR_SERIAL)?;
    get_int(attrs, ATTR_PLENGTH)?.ok_or(CertError::MissingAttribute(ATTR_PLENGTH))?;
    check_non_negative(attrs, ATTR_PLENGTH)?;
    check_non_negative(attrs, ATTR_VERSION)?;
    get_str(attrs, ATTR_SUBJECT_NAME)?;
    get_str(attrs, ATTR_ISSUER_NAME)?;
    get_str(attrs, ATTR_OBJECT_ID)?;
    get_int(attrs, ATTR_NOT_BEFORE)?;
    get_int(attrs, ATTR_NOT_AFTER)?;
    Ok(())
}

fn signed_bytes(attrs: &AttrMap, signature: &[u8]) -> Vec<u8> {
    let mut out = canonical_encode(attrs);
    out.extend_from_slice(&(signature.len() as u32).to_be_bytes());
    out.extend_from_slice(signature);
    out
}

fn split_signed(bytes: &[u8]) -> Result<(AttrMap, Vec<u8>), CertError> {
    // The signature trails the attribute encoding; its length is the
    // big-endian u32 just before it. Ed25519 signatures are 64 bytes but
    // the format does not assume it.
    for sig_len in [64usize].into_iter().chain(0..bytes.len().saturating_sub(3)) {
        if bytes.len() < sig_len + 4 {
            continue;
        }
        let split = bytes.len() - sig_len - 4;
        let len_field = u32::from_be_bytes(bytes[split..split + 4].try_into().unwrap()) as usize;
        if len_field != sig_len {
            continue;
        }
        if let Ok(attrs) = canonical_decode(&bytes[..split]) {
            return Ok((attrs, bytes[split + 4..].to_vec()));
        }
    }
    Err(CertError::Truncated)
}

/// One delegation link: attributes signed by the issuer's key.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Certificate {
    attrs: AttrMap,
    signature: Vec<u8>,
}

impl Certificate {
    /// Assembles a certificate from parts without checking anything.
    pub fn from_parts(attrs: AttrMap, signature: Vec<u8>) -> Self {
        Certificate { attrs, signature }
    }

    pub fn attrs(&self) -> &AttrMap {
        &self.attrs
    }

    pub fn signature(&self) -> &[u8] {
        &self.signature
    }

    pub fn get(&self, name: &str) -> Option<&AttrValue> {
        self.attrs.get(name)
    }

    pub fn subject_key(&self) -> Option<PublicKey> {
        self.str_attr(ATTR_PUBKEY).and_then(|h| PublicKey::from_hex(h).ok())
    }

    pub fn issuer_key(&self) -> Option<PublicKey> {
        self.str_attr(ATTR_ISSUER_PUBKEY)
            .and_then(|h| PublicKey::from_hex(h).ok())
    }

    pub fn rights(&self) -> Option<&str> {
        self.str_attr(ATTR_RIGHTS)
    }

    pub fn p_length(&self) -> Option<i64> {
        self.int_attr(ATTR_PLENGTH)
    }

    pub fn object_id(&self) -> Option<&str> {
        self.str_attr(ATTR_OBJECT_ID)
    }

    pub fn version(&self) -> Option<i64> {
        self.int_attr(ATTR_VERSION)
    }

    pub fn subject_name(&self) -> Option<&str> {
        self.str_attr(ATTR_SUBJECT_NAME)
    }

    pub fn issuer_name(&self) -> Option<&str> {
        self.str_attr(ATTR_ISSUER_NAME)
    }

    pub fn serial(&self) -> Option<&str> {
        self.str_attr(ATTR_SERIAL)
    }

    pub fn str_attr(&self, name: &str) -> Option<&str> {
        self.attrs.get(name).and_then(AttrValue::as_str)
    }

    pub fn int_attr(&self, name: &str) -> Option<i64> {
        self.attrs.get(name).and_then(AttrValue::as_int)
    }

    /// `canonical_encode(attrs) | u32 signature length | signature`.
    pub fn to_bytes(&self) -> Vec<u8> {
        signed_bytes(&self.attrs, &self.signature)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CertError> {
        let (attrs, signature) = split_signed(bytes)?;
        Ok(Certificate { attrs, signature })
    }
}

impl fmt::Debug for Certificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Certificate")
            .field("attrs", &self.attrs)
            .field("signature", &hex::encode(&self.signature))
            .finish()
    }
}

/// Signs `attrs` as a delegation certificate issued by `issuer`.
pub fn sign_certificate(attrs: AttrMap, issuer: &KeyPair) -> Result<Certificate, CertError> {
    check_cert_attrs(&attrs)?;
    if require_key(&attrs, ATTR_ISSUER_PUBKEY)? != issuer.public_key() {
        return Err(CertError::IssuerMismatch);
    }
    let signature = issuer.sign(&canonical_encode(&attrs));
    Ok(Certificate { attrs, signature })
}

/// True iff the signature verifies under the certificate's own issuerPubkey.
pub fn verify_certificate(cert: &Certificate) -> bool {
    match cert.issuer_key() {
        Some(key) => key.verify(&canonical_encode(&cert.attrs), &cert.signature),
        None => false,
    }
}

/// Convenience for assembling certificate attributes. A missing `serial`
/// is derived from a digest of the other attributes, so identical inputs
/// produce identical certificates.
#[derive(Clone, Debug)]
pub struct CertBuilder {
    attrs: AttrMap,
}

impl CertBuilder {
    pub fn new(subject: &PublicKey, issuer: &PublicKey, rights: &str, p_length: i64) -> Self {
        let mut attrs = AttrMap::new();
        attrs.insert(ATTR_PUBKEY.into(), subject.to_hex().into());
        attrs.insert(ATTR_ISSUER_PUBKEY.into(), issuer.to_hex().into());
        attrs.insert(ATTR_RIGHTS.into(), rights.into());
        attrs.insert(ATTR_PLENGTH.into(), p_length.into());
        CertBuilder { attrs }
    }

    pub fn attr(mut self, name: &str, value: impl Into<AttrValue>) -> Self {
        self.attrs.insert(name.to_string(), value.into());
        self
    }

    pub fn maybe_attr(self, name: &str, value: Option<impl Into<AttrValue>>) -> Self {
        match value {
            Some(v) => self.attr(name, v),
            None => self,
        }
    }

    pub fn sign(mut self, issuer: &KeyPair) -> Result<Certificate, CertError> {
        if !self.attrs.contains_key(ATTR_SERIAL) {
            let digest = Sha256::digest(canonical_encode(&self.attrs));
            self.attrs
                .insert(ATTR_SERIAL.into(), hex::encode(&digest[..16]).into());
        }
        sign_certificate(self.attrs, issuer)
    }
}

/// An ordered certificate chain `C_1 .. C_n`, never empty.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Heritage {
    certs: Vec<Certificate>,
}

impl Heritage {
    pub fn new(certs: Vec<Certificate>) -> Result<Self, CertError> {
        if certs.is_empty() {
            return Err(CertError::EmptyHeritage);
        }
        Ok(Heritage { certs })
    }

    pub fn single(cert: Certificate) -> Self {
        Heritage { certs: vec![cert] }
    }

    pub fn certs(&self) -> &[Certificate] {
        &self.certs
    }

    pub fn len(&self) -> usize {
        self.certs.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn first(&self) -> &Certificate {
        &self.certs[0]
    }

    pub fn last(&self) -> &Certificate {
        self.certs.last().expect("heritage is never empty")
    }

    /// Public key of the root principal (the issuer of `C_1`).
    pub fn root_key(&self) -> Option<PublicKey> {
        self.first().issuer_key()
    }

    /// Public key of the current holder (the subject of `C_n`).
    pub fn tail_key(&self) -> Option<PublicKey> {
        self.last().subject_key()
    }

    /// The heritage with `cert` appended.
    pub fn extended(&self, cert: Certificate) -> Heritage {
        let mut certs = self.certs.clone();
        certs.push(cert);
        Heritage { certs }
    }

    /// The first `len` certificates; `len` is clamped to `1..=self.len()`.
    pub fn prefix(&self, len: usize) -> Heritage {
        let len = len.clamp(1, self.certs.len());
        Heritage {
            certs: self.certs[..len].to_vec(),
        }
    }

    pub fn into_certs(self) -> Vec<Certificate> {
        self.certs
    }
}

impl fmt::Debug for Heritage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(&self.certs).finish()
    }
}

/// Which structural or cryptographic check rejected a heritage.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ChainCheck {
    /// Required attribute missing or ill-typed.
    Malformed(String),
    /// `C_1.issuerPubkey` is not the expected root key.
    RootIssuer,
    /// `C_{i}.issuerPubkey` differs from `C_{i-1}.pubkey`.
    KeyChaining,
    /// pLength did not strictly decrease, or went negative.
    PathLength,
    Signature,
    NotYetValid,
    Expired,
}

impl fmt::Display for ChainCheck {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChainCheck::Malformed(why) => write!(f, "malformed certificate ({why})"),
            ChainCheck::RootIssuer => f.write_str("issuer is not the root key"),
            ChainCheck::KeyChaining => f.write_str("issuer key does not match previous subject"),
            ChainCheck::PathLength => f.write_str("pLength does not strictly decrease"),
            ChainCheck::Signature => f.write_str("signature does not verify"),
            ChainCheck::NotYetValid => f.write_str("certificate not yet valid"),
            ChainCheck::Expired => f.write_str("certificate expired"),
        }
    }
}

/// First failing check, with the 1-based index of the offending certificate.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("chain break at cert {index}: {check}")]
pub struct ChainBreak {
    pub index: usize,
    pub check: ChainCheck,
}

pub type ValidationReport = Result<(), ChainBreak>;

/// Validates `h` against `root` using the local clock.
pub fn validate_heritage(root: &PublicKey, h: &Heritage) -> ValidationReport {
    validate_heritage_at(root, h, unix_now())
}

/// Validates `h` against `root`, checking validity periods at `now`.
///
/// Certificates are checked in order; within one certificate the order is
/// well-formedness, issuer linkage, pLength, signature, validity period.
pub fn validate_heritage_at(root: &PublicKey, h: &Heritage, now: i64) -> ValidationReport {
    let mut prev: Option<(PublicKey, i64)> = None;
    for (i, cert) in h.certs().iter().enumerate() {
        let index = i + 1;
        let fail = |check| Err(ChainBreak { index, check });
        if let Err(e) = check_cert_attrs(&cert.attrs) {
            return fail(ChainCheck::Malformed(e.to_string()));
        }
        let subject = cert.subject_key().expect("checked above");
        let issuer = cert.issuer_key().expect("checked above");
        let p_length = cert.p_length().expect("checked above");
        match prev {
            None if issuer != *root => return fail(ChainCheck::RootIssuer),
            Some((prev_subject, _)) if issuer != prev_subject => {
                return fail(ChainCheck::KeyChaining)
            }
            _ => {}
        }
        if p_length < 0 || matches!(prev, Some((_, prev_len)) if prev_len <= p_length) {
            return fail(ChainCheck::PathLength);
        }
        if !issuer.verify(&canonical_encode(&cert.attrs), &cert.signature) {
            return fail(ChainCheck::Signature);
        }
        if matches!(cert.int_attr(ATTR_NOT_BEFORE), Some(nb) if now < nb) {
            return fail(ChainCheck::NotYetValid);
        }
        if matches!(cert.int_attr(ATTR_NOT_AFTER), Some(na) if now > na) {
            return fail(ChainCheck::Expired);
        }
        prev = Some((subject, p_length));
    }
    Ok(())
}

/// A signed request: the operation type and parameters, signed by the
/// holder of the codecap being exercised.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct RequestCert {
    attrs: AttrMap,
    signature: Vec<u8>,
}

impl RequestCert {
    /// Signs `attrs`, setting `signerPubkey` to the signer's key. Requires
    /// `type`, `nonce` and `timestamp`.
    pub fn sign(mut attrs: AttrMap, signer: &KeyPair) -> Result<Self, CertError> {
        require_str(&attrs, ATTR_TYPE)?;
        require_str(&attrs, ATTR_NONCE)?;
        get_int(&attrs, ATTR_TIMESTAMP)?.ok_or(CertError::MissingAttribute(ATTR_TIMESTAMP))?;
        let signer_hex = signer.public_key().to_hex();
        match get_str(&attrs, ATTR_SIGNER_PUBKEY)? {
            Some(existing) if existing != signer_hex => return Err(CertError::SignerMismatch),
            _ => {}
        }
        attrs.insert(ATTR_SIGNER_PUBKEY.into(), signer_hex.into());
        let signature = signer.sign(&canonical_encode(&attrs));
        Ok(RequestCert { attrs, signature })
    }

    pub fn from_parts(attrs: AttrMap, signature: Vec<u8>) -> Self {
        RequestCert { attrs, signature }
    }

    pub fn attrs(&self) -> &AttrMap {
        &self.attrs
    }

    pub fn signature(&self) -> &[u8] {
        &self.signature
    }

    pub fn get(&self, name: &str) -> Option<&AttrValue> {
        self.attrs.get(name)
    }

    pub fn str_attr(&self, name: &str) -> Option<&str> {
        self.attrs.get(name).and_then(AttrValue::as_str)
    }

    pub fn int_attr(&self, name: &str) -> Option<i64> {
        self.attrs.get(name).and_then(AttrValue::as_int)
    }

    pub fn request_type(&self) -> Option<&str> {
        self.str_attr(ATTR_TYPE)
    }

    pub fn signer(&self) -> Option<PublicKey> {
        self.str_attr(ATTR_SIGNER_PUBKEY)
            .and_then(|h| PublicKey::from_hex(h).ok())
    }

    pub fn nonce(&self) -> Option<&str> {
        self.str_attr(ATTR_NONCE)
    }

    pub fn timestamp(&self) -> Option<i64> {
        self.int_attr(ATTR_TIMESTAMP)
    }

    /// True iff the signature verifies under `signerPubkey`.
    pub fn verify(&self) -> bool {
        match self.signer() {
            Some(key) => key.verify(&canonical_encode(&self.attrs), &self.signature),
            None => false,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        signed_bytes(&self.attrs, &self.signature)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CertError> {
        let (attrs, signature) = split_signed(bytes)?;
        Ok(RequestCert { attrs, signature })
    }
}

impl fmt::Debug for RequestCert {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RequestCert")
            .field("attrs", &self.attrs)
            .field("signature", &hex::encode(&self.signature))
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attrs;

    fn key(n: u8) -> KeyPair {
        KeyPair::from_seed(&[n; 32]).unwrap()
    }

    fn link(subject: &KeyPair, issuer: &KeyPair, p_length: i64) -> Certificate {
        CertBuilder::new(&subject.public_key(), &issuer.public_key(), "1", p_length)
            .sign(issuer)
            .unwrap()
    }

    #[test]
    fn signed_certificate_verifies() {
        let cert = link(&key(1), &key(0), 3);
        assert!(verify_certificate(&cert));
    }

    #[test]
    fn missing_rights_is_rejected() {
        let issuer = key(0);
        let mut attrs = CertBuilder::new(&key(1).public_key(), &issuer.public_key(), "1", 1)
            .attr(ATTR_SERIAL, "s")
            .attrs;
        attrs.remove(ATTR_RIGHTS);
        assert_eq!(
            sign_certificate(attrs, &issuer),
            Err(CertError::MissingAttribute(ATTR_RIGHTS))
        );
    }

    #[test]
    fn issuer_mismatch_is_rejected() {
        let attrs = CertBuilder::new(&key(1).public_key(), &key(2).public_key(), "1", 1)
            .attr(ATTR_SERIAL, "s")
            .attrs;
        assert_eq!(
            sign_certificate(attrs, &key(0)),
            Err(CertError::IssuerMismatch)
        );
    }

    #[test]
    fn flipped_signature_bit_fails() {
        let cert = link(&key(1), &key(0), 3);
        for bit in 0..cert.signature.len() * 8 {
            let mut sig = cert.signature.clone();
            sig[bit / 8] ^= 1 << (bit % 8);
            assert!(!verify_certificate(&Certificate::from_parts(cert.attrs.clone(), sig)));
        }
    }

    #[test]
    fn single_certificate_chain_validates() {
        let root = key(0);
        let h = Heritage::single(link(&key(1), &root, 4));
        assert_eq!(validate_heritage(&root.public_key(), &h), Ok(()));
    }

    #[test]
    fn equal_plength_fails_path_length_check() {
        let (k0, k1, k2) = (key(0), key(1), key(2));
        let h = Heritage::new(vec![link(&k1, &k0, 3), link(&k2, &k1, 3)]).unwrap();
        assert_eq!(
            validate_heritage(&k0.public_key(), &h),
            Err(ChainBreak { index: 2, check: ChainCheck::PathLength })
        );
    }

    #[test]
    fn wrong_root_and_broken_chain() {
        let (k0, k1, k2, k3) = (key(0), key(1), key(2), key(3));
        let h = Heritage::single(link(&k1, &k0, 3));
        assert_eq!(
            validate_heritage(&k3.public_key(), &h).unwrap_err().check,
            ChainCheck::RootIssuer
        );
        let broken = Heritage::new(vec![link(&k1, &k0, 3), link(&k3, &k2, 2)]).unwrap();
        let err = validate_heritage(&k0.public_key(), &broken).unwrap_err();
        assert_eq!(err, ChainBreak { index: 2, check: ChainCheck::KeyChaining });
        assert_eq!(err.to_string(), "chain break at cert 2: issuer key does not match previous subject");
    }

    #[test]
    fn validity_window_uses_supplied_clock() {
        let (k0, k1) = (key(0), key(1));
        let cert = CertBuilder::new(&k1.public_key(), &k0.public_key(), "1", 1)
            .attr(ATTR_NOT_BEFORE, 100i64)
            .attr(ATTR_NOT_AFTER, 200i64)
            .sign(&k0)
            .unwrap();
        let h = Heritage::single(cert);
        let root = k0.public_key();
        assert_eq!(validate_heritage_at(&root, &h, 99).unwrap_err().check, ChainCheck::NotYetValid);
        assert_eq!(validate_heritage_at(&root, &h, 100), Ok(()));
        assert_eq!(validate_heritage_at(&root, &h, 200), Ok(()));
        assert_eq!(validate_heritage_at(&root, &h, 201).unwrap_err().check, ChainCheck::Expired);
    }

    #[test]
    fn serial_is_deterministic() {
        let a = link(&key(1), &key(0), 3);
        let b = link(&key(1), &key(0), 3);
        assert_eq!(a, b);
        assert_ne!(a.serial(), link(&key(1), &key(0), 2).serial());
    }

    #[test]
    fn request_sign_and_verify() {
        let k = key(4);
        let r = RequestCert::sign(
            attrs! { "type" => "READ", "nonce" => "n1", "timestamp" => 5i64, "uri" => "/x" },
            &k,
        )
        .unwrap();
        assert!(r.verify());
        assert_eq!(r.signer(), Some(k.public_key()));
        let mut tampered = r.attrs.clone();
        tampered.insert("uri".into(), "/y".into());
        assert!(!RequestCert::from_parts(tampered, r.signature.clone()).verify());
    }

    #[test]
    fn signed_bytes_round_trip() {
        let cert = link(&key(1), &key(0), 3);
        assert_eq!(Certificate::from_bytes(&cert.to_bytes()).unwrap(), cert);
    }
}
