use std::sync::Arc;
use std::time::Duration;

use crate::certchain::{unix_now, validate_heritage, Heritage, PublicKey, RequestCert};
use crate::objectsvc::{ObjectService, Response};

use super::frame::{RequestFrame, ResponseFrame, SessionField};
use super::session::SessionCache;
use super::WireError;

/// What the wire server dispatches to once a heritage is in hand.
pub trait Handler: Send + Sync {
    fn realm(&self) -> &str;
    fn root_key(&self) -> PublicKey;
    fn handle(&self, h: &Heritage, r: &RequestCert, transport: Option<&PublicKey>, payload: &[u8]) -> Response;
}

impl Handler for ObjectService {
    fn realm(&self) -> &str {
        ObjectService::realm(self)
    }

    fn root_key(&self) -> PublicKey {
        self.public_key()
    }

    fn handle(&self, h: &Heritage, r: &RequestCert, transport: Option<&PublicKey>, payload: &[u8]) -> Response {
        self.handle_request(h, r, transport, payload, unix_now())
    }
}

/// Frames in, frames out. Issues the challenge and owns the session cache.
pub trait FrameHandler: Send + Sync {
    fn service_key(&self) -> PublicKey;
    fn serve_frame(&self, bytes: &[u8], transport: Option<&PublicKey>) -> Vec<u8>;
}

pub struct Server<H: Handler> {
    handler: Arc<H>,
    sessions: SessionCache,
}

impl<H: Handler> Server<H> {
    pub fn new(handler: Arc<H>) -> Self {
        Server {
            handler,
            sessions: SessionCache::default(),
        }
    }

    pub fn with_session_ttl(handler: Arc<H>, ttl: Duration) -> Self {
        Server {
            handler,
            sessions: SessionCache::new(ttl),
        }
    }

    pub fn handler(&self) -> &Arc<H> {
        &self.handler
    }

    pub fn sessions(&self) -> &SessionCache {
        &self.sessions
    }

    fn challenge(&self, why: &str) -> ResponseFrame {
        ResponseFrame::challenge(self.handler.realm(), why)
    }

    pub fn serve(&self, frame: RequestFrame, transport: Option<&PublicKey>) -> ResponseFrame {
        let heritage = match (&frame.auth, &frame.session) {
            (Some(h), _) => h.clone(),
            (None, Some(SessionField::Token(t))) => match self.sessions.lookup(t, transport) {
                Some(h) => h,
                None => return self.challenge("unknown or expired session"),
            },
            (None, _) => return self.challenge("credentials required"),
        };
        if let Err(brk) = validate_heritage(&self.handler.root_key(), &heritage) {
            return self.challenge(&brk.to_string());
        }
        let response = self.handler.handle(&heritage, &frame.request, transport, &frame.payload);
        let mut out = ResponseFrame::from_response(response);
        out.realm = Some(self.handler.realm().to_string());
        if frame.session == Some(SessionField::New) {
            out.session = Some(self.sessions.issue(heritage, transport.copied()));
        }
        out
    }
}

impl<H: Handler> FrameHandler for Server<H> {
    fn service_key(&self) -> PublicKey {
        self.handler.root_key()
    }

    fn serve_frame(&self, bytes: &[u8], transport: Option<&PublicKey>) -> Vec<u8> {
        let out = match RequestFrame::parse(bytes) {
            Ok(frame) => self.serve(frame, transport),
            Err(e @ WireError::Header(_)) => self.challenge(&e.to_string()),
            Err(e) => {
                let mut r = ResponseFrame::from_response(Response {
                    status: 400,
                    payload: e.to_string().into_bytes(),
                    stage: None,
                    error: Some("bad_request".into()),
                    realm: None,
                });
                r.realm = Some(self.handler.realm().to_string());
                r
            }
        };
        out.to_bytes()
    }
}
