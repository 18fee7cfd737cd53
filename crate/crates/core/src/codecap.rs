//! Codecap lifecycle and the server-side authorization decision.
//!
//! A codecap is a heritage paired with the private key of its last
//! subject. Only heritages travel between principals; the recipient of a
//! delegated heritage pairs it with its own key.

use std::fmt;

use rand::RngCore;
use thiserror::Error;

use crate::certchain::{
    unix_now, validate_heritage_at, AttrMap, AttrValue, CertBuilder, CertError, ChainBreak,
    Heritage, KeyPair, PublicKey, RequestCert, ATTR_ISSUER_NAME, ATTR_NONCE, ATTR_OBJECT_ID,
    ATTR_TIMESTAMP, ATTR_TYPE, ATTR_VERSION,
};
use crate::rights::{
    evaluate, heritage_value, attrs_record, EvalContext, EvalOutcome, ParseError, RightsProgram,
    Value,
};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CapError {
    #[error("invalid rights function: {0}")]
    Rights(#[from] ParseError),
    #[error(transparent)]
    Cert(#[from] CertError),
    #[error("delegation depth exhausted")]
    DepthExhausted,
    #[error("pLength {requested} must be below the holder's pLength {holder}")]
    PathLengthTooLarge { requested: i64, holder: i64 },
    #[error("pLength must be non-negative")]
    NegativePathLength,
    #[error("private key does not match the last certificate")]
    KeyMismatch,
    #[error("key not on heritage")]
    KeyNotOnHeritage,
    #[error("request attributes must include `type`")]
    MissingType,
}

/// A heritage plus the private key of its last subject.
#[derive(Clone)]
pub struct Codecap {
    heritage: Heritage,
    key: KeyPair,
}

impl Codecap {
    pub fn new(heritage: Heritage, key: KeyPair) -> Result<Self, CapError> {
        if heritage.tail_key() != Some(key.public_key()) {
            return Err(CapError::KeyMismatch);
        }
        Ok(Codecap { heritage, key })
    }

    pub fn heritage(&self) -> &Heritage {
        &self.heritage
    }

    pub fn key(&self) -> &KeyPair {
        &self.key
    }

    pub fn public_key(&self) -> PublicKey {
        self.key.public_key()
    }

    /// Key of the service the codecap grants access to.
    pub fn service_key(&self) -> Option<PublicKey> {
        self.heritage.root_key()
    }

    pub fn into_parts(self) -> (Heritage, KeyPair) {
        (self.heritage, self.key)
    }
}

impl fmt::Debug for Codecap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Codecap")
            .field("heritage_len", &self.heritage.len())
            .field("holder", &self.key.public_key())
            .finish_non_exhaustive()
    }
}

fn check_rights(src: &str) -> Result<(), CapError> {
    RightsProgram::parse(src)?;
    Ok(())
}

/// Mints a one-certificate heritage from scratch, issued by the service.
/// Factory caps omit `object_id`/`version`.
pub fn mint_root(
    service_key: &KeyPair,
    subject: &PublicKey,
    rights_src: &str,
    p_length: i64,
    object_id: Option<&str>,
    version: Option<i64>,
) -> Result<Heritage, CapError> {
    mint_root_named(service_key, None, subject, rights_src, p_length, object_id, version)
}

/// [`mint_root`] that also records the service's display name as `issuerName`.
pub fn mint_root_named(
    service_key: &KeyPair,
    service_name: Option<&str>,
    subject: &PublicKey,
    rights_src: &str,
    p_length: i64,
    object_id: Option<&str>,
    version: Option<i64>,
) -> Result<Heritage, CapError> {
    if p_length < 0 {
        return Err(CapError::NegativePathLength);
    }
    check_rights(rights_src)?;
    let cert = CertBuilder::new(subject, &service_key.public_key(), rights_src, p_length)
        .maybe_attr(ATTR_ISSUER_NAME, service_name)
        .maybe_attr(ATTR_OBJECT_ID, object_id)
        .maybe_attr(ATTR_VERSION, version)
        .sign(service_key)?;
    Ok(Heritage::single(cert))
}

/// Restricted delegation: appends a certificate for `target` signed by the
/// holder. Returns only the heritage.
pub fn delegate(
    cap: &Codecap,
    target: &PublicKey,
    rights_src: &str,
    p_length: i64,
) -> Result<Heritage, CapError> {
    if cap.heritage.tail_key() != Some(cap.key.public_key()) {
        return Err(CapError::KeyMismatch);
    }
    let holder = cap.heritage.last().p_length().unwrap_or(0);
    if holder <= 0 {
        return Err(CapError::DepthExhausted);
    }
    if p_length < 0 {
        return Err(CapError::NegativePathLength);
    }
    if p_length >= holder {
        return Err(CapError::PathLengthTooLarge {
            requested: p_length,
            holder,
        });
    }
    check_rights(rights_src)?;
    let cert = CertBuilder::new(target, &cap.key.public_key(), rights_src, p_length)
        .sign(&cap.key)?;
    Ok(cap.heritage.extended(cert))
}

/// Wraps a rights function so it only allows when its certificate is the
/// last one on the heritage.
pub fn confine(rights_src: &str) -> Result<String, CapError> {
    check_rights(rights_src)?;
    Ok(format!("(isLast) && ({rights_src})"))
}

/// `(A) && (B) && ...` over the given rights sources.
pub fn conjunction<'a, I>(sources: I) -> String
where
    I: IntoIterator<Item = &'a str>,
{
    sources
        .into_iter()
        .map(|s| format!("({s})"))
        .collect::<Vec<_>>()
        .join(" && ")
}

/// Rights amplification: truncates `h` at the holder's own (deepest)
/// certificate and pairs the prefix with the holder's key.
pub fn amplify(h: &Heritage, holder: &KeyPair) -> Result<Codecap, CapError> {
    let me = holder.public_key();
    let idx = h
        .certs()
        .iter()
        .rposition(|c| c.subject_key() == Some(me))
        .ok_or(CapError::KeyNotOnHeritage)?;
    Codecap::new(h.prefix(idx + 1), holder.clone())
}

fn fresh_nonce() -> String {
    let mut bytes = [0u8; 16];
    rand::thread_rng().fill_bytes(&mut bytes);
    hex::encode(bytes)
}

/// Signs a request with the codecap's key, filling in `nonce` and
/// `timestamp` when absent.
pub fn sign_request(cap: &Codecap, mut attrs: AttrMap) -> Result<RequestCert, CapError> {
    if !matches!(attrs.get(ATTR_TYPE), Some(AttrValue::Str(_))) {
        return Err(CapError::MissingType);
    }
    attrs
        .entry(ATTR_NONCE.to_string())
        .or_insert_with(|| AttrValue::Str(fresh_nonce()));
    attrs
        .entry(ATTR_TIMESTAMP.to_string())
        .or_insert_with(|| AttrValue::Int(unix_now()));
    Ok(RequestCert::sign(attrs, &cap.key)?)
}

/// Stage at which [`authorize`] rejected a request.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FailingStage {
    TransportBinding,
    Heritage(ChainBreak),
    RequestSignature,
    Version,
    /// 1-based index of the certificate whose rights function denied.
    Rights(usize),
}

impl FailingStage {
    /// Stable short code, safe to reveal on the wire.
    pub fn code(&self) -> String {
        match self {
            FailingStage::TransportBinding => "transport_binding".into(),
            FailingStage::Heritage(_) => "heritage".into(),
            FailingStage::RequestSignature => "request_signature".into(),
            FailingStage::Version => "version".into(),
            FailingStage::Rights(i) => format!("rights({i})"),
        }
    }
}

impl fmt::Display for FailingStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FailingStage::Heritage(brk) => write!(f, "heritage: {brk}"),
            other => f.write_str(&other.code()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decision {
    pub allowed: bool,
    pub failing_stage: Option<FailingStage>,
    /// One outcome per evaluated rights function, in heritage order.
    pub rights_outcomes: Vec<EvalOutcome>,
}

impl Decision {
    fn deny(stage: FailingStage, rights_outcomes: Vec<EvalOutcome>) -> Self {
        Decision {
            allowed: false,
            failing_stage: Some(stage),
            rights_outcomes,
        }
    }
}

/// Server-side parameters of an authorization check.
pub struct AuthPolicy<'a> {
    pub root: PublicKey,
    pub now: i64,
    pub step_budget: u64,
    /// Skip the transport stage when no authenticated peer key is known.
    pub allow_unauthenticated_transport: bool,
    /// Current version of an object id; `None` from the lookup (unknown
    /// object) fails the version stage. When the whole lookup is absent
    /// the version stage is skipped.
    pub versions: Option<&'a dyn Fn(&str) -> Option<i64>>,
}

impl<'a> AuthPolicy<'a> {
    pub fn new(root: PublicKey, now: i64, step_budget: u64) -> Self {
        AuthPolicy {
            root,
            now,
            step_budget,
            allow_unauthenticated_transport: false,
            versions: None,
        }
    }
}

/// The full acceptance predicate, in order: transport binding, heritage
/// validity, request signature, object version, then every rights
/// function. Stops at the first failure.
pub fn authorize(
    policy: &AuthPolicy<'_>,
    h: &Heritage,
    r: &RequestCert,
    transport: Option<&PublicKey>,
    state: Option<&Value>,
) -> Decision {
    let tail = h.tail_key();
    match transport {
        Some(peer) if Some(*peer) != tail => {
            return Decision::deny(FailingStage::TransportBinding, Vec::new())
        }
        None if !policy.allow_unauthenticated_transport => {
            return Decision::deny(FailingStage::TransportBinding, Vec::new())
        }
        _ => {}
    }
    if let Err(brk) = validate_heritage_at(&policy.root, h, policy.now) {
        return Decision::deny(FailingStage::Heritage(brk), Vec::new());
    }
    if r.signer() != tail || !r.verify() {
        return Decision::deny(FailingStage::RequestSignature, Vec::new());
    }
    if let (Some(versions), Some(version)) = (policy.versions, h.first().version()) {
        let current = h.first().object_id().and_then(versions);
        if current != Some(version) {
            return Decision::deny(FailingStage::Version, Vec::new());
        }
    }

    let ctx = EvalContext {
        heritage: heritage_value(h),
        idx: 0,
        request: attrs_record(r.attrs()),
        now: policy.now,
        state: state.cloned(),
    };
    let mut outcomes = Vec::with_capacity(h.len());
    for (i, cert) in h.certs().iter().enumerate() {
        let src = cert.rights().expect("validated heritage has rights");
        let outcome = match RightsProgram::parse(src) {
            Ok(p) => evaluate(&p, &ctx.with_idx(i), policy.step_budget),
            Err(e) => EvalOutcome {
                decision: crate::rights::Verdict::Deny,
                cause: crate::rights::Cause::ParseError,
                steps_used: 0,
                message: Some(e.to_string()),
            },
        };
        let allowed = outcome.allowed();
        outcomes.push(outcome);
        if !allowed {
            return Decision::deny(FailingStage::Rights(i + 1), outcomes);
        }
    }
    Decision {
        allowed: true,
        failing_stage: None,
        rights_outcomes: outcomes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attrs;
    use crate::certchain::{validate_heritage, ChainCheck};
    use crate::rights::Cause;

    fn key(n: u8) -> KeyPair {
        KeyPair::from_seed(&[n; 32]).unwrap()
    }

    fn policy(root: &KeyPair) -> AuthPolicy<'static> {
        AuthPolicy::new(root.public_key(), unix_now(), 10_000)
    }

    fn check(cap: &Codecap, root: &KeyPair, req: AttrMap) -> Decision {
        let r = sign_request(cap, req).unwrap();
        authorize(&policy(root), cap.heritage(), &r, Some(&cap.public_key()), None)
    }

    #[test]
    fn mint_validates() {
        let (svc, p1) = (key(0), key(1));
        let h = mint_root(&svc, &p1.public_key(), "1", 4, Some("o1"), Some(0)).unwrap();
        assert_eq!(h.len(), 1);
        assert_eq!(validate_heritage(&svc.public_key(), &h), Ok(()));
        assert_eq!(h.first().object_id(), Some("o1"));
        assert_eq!(h.first().version(), Some(0));
        assert!(matches!(
            mint_root(&svc, &p1.public_key(), "1 +", 4, None, None),
            Err(CapError::Rights(_))
        ));
    }

    #[test]
    fn minted_cap_authorizes_read() {
        let (svc, p1) = (key(0), key(1));
        let h = mint_root(&svc, &p1.public_key(), r#"request.type == "READ""#, 4, None, None).unwrap();
        let cap = Codecap::new(h, p1).unwrap();
        assert!(check(&cap, &svc, attrs! { "type" => "READ" }).allowed);
        let d = check(&cap, &svc, attrs! { "type" => "WRITE" });
        assert_eq!(d.failing_stage, Some(FailingStage::Rights(1)));
    }

    #[test]
    fn delegation_grows_chain_and_narrows() {
        let (svc, p1, p2) = (key(0), key(1), key(2));
        let c1 = Codecap::new(mint_root(&svc, &p1.public_key(), "1", 4, None, None).unwrap(), p1).unwrap();
        let h2 = delegate(&c1, &p2.public_key(), "request.offset >= 256", 3).unwrap();
        assert_eq!(h2.len(), 2);
        assert_eq!(validate_heritage(&svc.public_key(), &h2), Ok(()));
        let c2 = Codecap::new(h2, p2).unwrap();
        let d = check(&c2, &svc, attrs! { "type" => "READ", "offset" => 0i64 });
        assert_eq!(d.failing_stage, Some(FailingStage::Rights(2)));
        assert!(check(&c1, &svc, attrs! { "type" => "READ", "offset" => 0i64 }).allowed);
    }

    #[test]
    fn delegation_depth_rules() {
        let (svc, p1, p2) = (key(0), key(1), key(2));
        let zero = Codecap::new(mint_root(&svc, &p1.public_key(), "1", 0, None, None).unwrap(), p1.clone()).unwrap();
        assert_eq!(delegate(&zero, &p2.public_key(), "1", 0), Err(CapError::DepthExhausted));
        let four = Codecap::new(mint_root(&svc, &p1.public_key(), "1", 4, None, None).unwrap(), p1).unwrap();
        assert!(matches!(
            delegate(&four, &p2.public_key(), "1", 4),
            Err(CapError::PathLengthTooLarge { .. })
        ));
        assert!(delegate(&four, &p2.public_key(), "(", 1).is_err());
    }

    #[test]
    fn codecap_requires_matching_key() {
        let (svc, p1, p2) = (key(0), key(1), key(2));
        let h = mint_root(&svc, &p1.public_key(), "1", 4, None, None).unwrap();
        assert_eq!(Codecap::new(h, p2).unwrap_err(), CapError::KeyMismatch);
    }

    #[test]
    fn confinement_denies_once_extended() {
        let (svc, p1, p2, p3) = (key(0), key(1), key(2), key(3));
        let c1 = Codecap::new(mint_root(&svc, &p1.public_key(), "1", 4, None, None).unwrap(), p1).unwrap();
        let confined = confine("1").unwrap();
        assert_eq!(confined, "(isLast) && (1)");
        let c2 = Codecap::new(delegate(&c1, &p2.public_key(), &confined, 3).unwrap(), p2).unwrap();
        assert!(check(&c2, &svc, attrs! { "type" => "READ" }).allowed);
        let c3 = Codecap::new(delegate(&c2, &p3.public_key(), "1", 2).unwrap(), p3).unwrap();
        let d = check(&c3, &svc, attrs! { "type" => "READ" });
        assert_eq!(d.failing_stage, Some(FailingStage::Rights(2)));
        assert!(confine("(").is_err());
    }

    #[test]
    fn conjunction_joins_sources() {
        assert_eq!(conjunction(["1", "var a = 2; a"]), "(1) && (var a = 2; a)");
        RightsProgram::parse(&conjunction(["isLast", "if (1) 1; else 0;"])).unwrap();
    }

    #[test]
    fn amplify_truncates_to_holder() {
        let (svc, p1, p2) = (key(0), key(1), key(2));
        let h1 = mint_root(&svc, &p1.public_key(), "1", 4, None, None).unwrap();
        let c1 = Codecap::new(h1.clone(), p1.clone()).unwrap();
        let h2 = delegate(&c1, &p2.public_key(), "0", 3).unwrap();
        let amp = amplify(&h2, &p1).unwrap();
        assert_eq!(amp.heritage(), &h1);
        assert_eq!(
            amp.heritage().certs()[0].to_bytes(),
            h2.certs()[0].to_bytes()
        );
        assert_eq!(amplify(&h2, &key(9)).unwrap_err(), CapError::KeyNotOnHeritage);
    }

    #[test]
    fn request_without_type_is_rejected() {
        let (svc, p1) = (key(0), key(1));
        let cap = Codecap::new(mint_root(&svc, &p1.public_key(), "1", 1, None, None).unwrap(), p1).unwrap();
        assert_eq!(sign_request(&cap, attrs! { "uri" => "/x" }).unwrap_err(), CapError::MissingType);
        let r = sign_request(&cap, attrs! { "type" => "READ", "uri" => "/x" }).unwrap();
        assert!(r.verify());
        assert_eq!(r.signer(), Some(cap.public_key()));
        assert!(r.nonce().is_some() && r.timestamp().is_some());
    }

    #[test]
    fn cross_paired_request_fails_signature_stage() {
        let (svc, p1, p2) = (key(0), key(1), key(2));
        let a = Codecap::new(mint_root(&svc, &p1.public_key(), "1", 1, None, None).unwrap(), p1).unwrap();
        let b = Codecap::new(mint_root(&svc, &p2.public_key(), "1", 1, None, None).unwrap(), p2).unwrap();
        let r = sign_request(&b, attrs! { "type" => "READ" }).unwrap();
        let d = authorize(&policy(&svc), a.heritage(), &r, Some(&a.public_key()), None);
        assert_eq!(d.failing_stage, Some(FailingStage::RequestSignature));
    }

    #[test]
    fn transport_stage() {
        let (svc, p1) = (key(0), key(1));
        let cap = Codecap::new(mint_root(&svc, &p1.public_key(), "1", 1, None, None).unwrap(), p1).unwrap();
        let r = sign_request(&cap, attrs! { "type" => "READ" }).unwrap();
        let mut pol = policy(&svc);
        assert_eq!(
            authorize(&pol, cap.heritage(), &r, Some(&key(7).public_key()), None).failing_stage,
            Some(FailingStage::TransportBinding)
        );
        assert_eq!(
            authorize(&pol, cap.heritage(), &r, None, None).failing_stage,
            Some(FailingStage::TransportBinding)
        );
        pol.allow_unauthenticated_transport = true;
        assert!(authorize(&pol, cap.heritage(), &r, None, None).allowed);
    }

    #[test]
    fn heritage_and_version_stages() {
        let (svc, p1) = (key(0), key(1));
        let cap = Codecap::new(
            mint_root(&svc, &p1.public_key(), "1", 1, Some("obj"), Some(3)).unwrap(),
            p1,
        )
        .unwrap();
        let r = sign_request(&cap, attrs! { "type" => "READ" }).unwrap();
        let wrong_root = AuthPolicy::new(key(5).public_key(), unix_now(), 100);
        assert!(matches!(
            authorize(&wrong_root, cap.heritage(), &r, Some(&cap.public_key()), None).failing_stage,
            Some(FailingStage::Heritage(ChainBreak { index: 1, check: ChainCheck::RootIssuer }))
        ));
        let current = |id: &str| (id == "obj").then_some(4);
        let mut pol = policy(&svc);
        pol.versions = Some(&current);
        assert_eq!(
            authorize(&pol, cap.heritage(), &r, Some(&cap.public_key()), None).failing_stage,
            Some(FailingStage::Version)
        );
        let matching = |_: &str| Some(3);
        pol.versions = Some(&matching);
        assert!(authorize(&pol, cap.heritage(), &r, Some(&cap.public_key()), None).allowed);
    }

    #[test]
    fn rights_outcomes_surface_causes() {
        let (svc, p1) = (key(0), key(1));
        let cap = Codecap::new(
            mint_root(&svc, &p1.public_key(), "request.offset", 1, None, None).unwrap(),
            p1,
        )
        .unwrap();
        let d = check(&cap, &svc, attrs! { "type" => "READ" });
        assert!(!d.allowed);
        assert_eq!(d.rights_outcomes.len(), 1);
        assert_eq!(d.rights_outcomes[0].cause, Cause::RuntimeError);
        assert_eq!(d.failing_stage.unwrap().code(), "rights(1)");
    }

    #[test]
    fn debug_output_hides_private_key() {
        let (svc, p1) = (key(0), key(1));
        let private_hex = p1.to_key_file().lines().next().unwrap().to_string();
        let cap = Codecap::new(mint_root(&svc, &p1.public_key(), "1", 1, None, None).unwrap(), p1).unwrap();
        assert!(!format!("{cap:?}").contains(&private_hex));
    }
}
