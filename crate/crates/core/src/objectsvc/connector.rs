use std::collections::{HashMap, HashSet};
use std::sync::{Arc, RwLock};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::certchain::{unix_now, AttrMap, AttrValue, PublicKey, RequestCert};
use crate::codecap::{sign_request, CapError, Codecap};

use super::{ObjectService, Response};

/// Request attribute binding a frame's payload bytes to the signature.
pub const ATTR_PAYLOAD_DIGEST: &str = "payloadDigest";

#[derive(Debug, Error)]
pub enum CallError {
    #[error("service unreachable: {0}")]
    Unreachable(String),
    #[error("transport authentication failed: {0}")]
    Authentication(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Cap(#[from] CapError),
}

/// Anything that can deliver a signed request to the service a codecap
/// is rooted at.
pub trait Connector: Send + Sync {
    fn call(&self, cap: &Codecap, attrs: AttrMap, payload: &[u8]) -> Result<Response, CallError>;
}

pub fn payload_digest(payload: &[u8]) -> String {
    hex::encode(Sha256::digest(payload))
}

/// Signs `attrs` with the codecap, adding the payload digest when there
/// is a payload.
pub fn sign_call(cap: &Codecap, mut attrs: AttrMap, payload: &[u8]) -> Result<RequestCert, CapError> {
    if !payload.is_empty() {
        attrs.insert(
            ATTR_PAYLOAD_DIGEST.to_string(),
            AttrValue::Str(payload_digest(payload)),
        );
    }
    sign_request(cap, attrs)
}

/// In-process registry of services keyed by public key. The caller's
/// codecap key stands in for the authenticated transport identity.
#[derive(Default)]
pub struct LocalNetwork {
    services: RwLock<HashMap<PublicKey, Arc<ObjectService>>>,
    down: RwLock<HashSet<PublicKey>>,
}

impl LocalNetwork {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn register(&self, service: Arc<ObjectService>) {
        self.services
            .write()
            .unwrap()
            .insert(service.public_key(), service);
    }

    /// Simulates a host outage.
    pub fn set_down(&self, key: &PublicKey, down: bool) {
        let mut set = self.down.write().unwrap();
        if down {
            set.insert(*key);
        } else {
            set.remove(key);
        }
    }

    pub fn service(&self, key: &PublicKey) -> Option<Arc<ObjectService>> {
        self.services.read().unwrap().get(key).cloned()
    }
}

impl Connector for LocalNetwork {
    fn call(&self, cap: &Codecap, attrs: AttrMap, payload: &[u8]) -> Result<Response, CallError> {
        let root = cap
            .service_key()
            .ok_or_else(|| CallError::Protocol("heritage has no root key".into()))?;
        if self.down.read().unwrap().contains(&root) {
            return Err(CallError::Unreachable(format!("host {root} is down")));
        }
        let service = self
            .service(&root)
            .ok_or_else(|| CallError::Unreachable(format!("no service with key {root}")))?;
        let r = sign_call(cap, attrs, payload)?;
        Ok(service.handle_request(cap.heritage(), &r, Some(&cap.public_key()), payload, unix_now()))
    }
}
