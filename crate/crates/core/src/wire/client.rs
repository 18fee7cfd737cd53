use std::collections::HashMap;
use std::sync::Mutex;

use sha2::{Digest, Sha256};

use crate::certchain::{AttrMap, PublicKey};
use crate::codecap::Codecap;
use crate::objectsvc::{sign_call, CallError, Connector, Response};

use super::frame::{challenge_realm, RequestFrame, ResponseFrame, SessionField};
use super::transport::Dialer;

type SessionKey = (PublicKey, PublicKey, [u8; 32]);

fn session_key(service: PublicKey, cap: &Codecap) -> SessionKey {
    let mut digest = Sha256::new();
    for cert in cap.heritage().certs() {
        digest.update(cert.to_bytes());
    }
    (service, cap.public_key(), digest.finalize().into())
}

/// Signs requests with a codecap and sends them over a [`Dialer`]. With
/// sessions enabled the heritage travels once; later calls carry only the
/// token. A 401 drops the token and is handed back to the caller as is.
pub struct Client<D: Dialer> {
    dialer: D,
    sessions: Option<Mutex<HashMap<SessionKey, String>>>,
}

impl<D: Dialer> Client<D> {
    pub fn new(dialer: D) -> Self {
        Client {
            dialer,
            sessions: None,
        }
    }

    pub fn with_sessions(dialer: D) -> Self {
        Client {
            dialer,
            sessions: Some(Mutex::new(HashMap::new())),
        }
    }

    pub fn dialer(&self) -> &D {
        &self.dialer
    }

    fn token(&self, key: &SessionKey) -> Option<String> {
        self.sessions.as_ref()?.lock().unwrap().get(key).cloned()
    }

    fn remember(&self, key: SessionKey, token: Option<String>) {
        if let Some(sessions) = &self.sessions {
            let mut sessions = sessions.lock().unwrap();
            match token {
                Some(t) => sessions.insert(key, t),
                None => sessions.remove(&key),
            };
        }
    }

    /// Sends an already-framed request and returns the raw response frame.
    pub fn exchange(&self, service: &PublicKey, cap: &Codecap, frame: &RequestFrame) -> Result<ResponseFrame, CallError> {
        let mut channel = self.dialer.dial(service, cap.key())?;
        let bytes = channel.roundtrip(&frame.to_bytes())?;
        ResponseFrame::parse(&bytes).map_err(|e| CallError::Protocol(e.to_string()))
    }
}

impl<D: Dialer> Connector for Client<D> {
    fn call(&self, cap: &Codecap, attrs: AttrMap, payload: &[u8]) -> Result<Response, CallError> {
        let service = cap
            .service_key()
            .ok_or_else(|| CallError::Protocol("heritage has no root key".into()))?;
        let request = sign_call(cap, attrs, payload)?;
        let key = session_key(service, cap);
        let (auth, session) = match self.token(&key) {
            Some(t) => (None, Some(SessionField::Token(t))),
            None => (
                Some(cap.heritage().clone()),
                self.sessions.as_ref().map(|_| SessionField::New),
            ),
        };
        let frame = RequestFrame {
            auth,
            session,
            request,
            payload: payload.to_vec(),
        };
        let mut out = self.exchange(&service, cap, &frame)?;
        if out.status == 401 {
            self.remember(key, None);
            if out.realm.is_none() {
                out.realm = out.challenge.as_deref().and_then(challenge_realm).map(str::to_string);
            }
        } else if out.session.is_some() {
            self.remember(key, out.session.clone());
        }
        Ok(out.into_response())
    }
}

/// One signed call without session reuse.
pub fn client_call(dialer: &dyn Dialer, cap: &Codecap, attrs: AttrMap, payload: &[u8]) -> Result<Response, CallError> {
    Client::new(dialer).call(cap, attrs, payload)
}
