//! The client/server transport: text frames carrying an `Authentication:
//! Codecaps` header (or a session token), the armored request certificate
//! and a payload; `401` challenges naming the service realm; and
//! transports that authenticate the peer's public key.

mod client;
mod frame;
mod header;
mod server;
mod session;
mod transport;

use thiserror::Error;

pub use client::{client_call, Client};
pub use frame::{challenge_realm, RequestFrame, ResponseFrame, SessionField, CALL, VERSION};
pub use header::{
    encode_auth_header, encode_auth_value, fold, parse_auth_header, parse_auth_value, unfold,
    AUTH_HEADER, AUTH_HEADER_ALT, SCHEME,
};
pub use server::{FrameHandler, Handler, Server};
pub use session::{SessionCache, DEFAULT_SESSION_TTL};
pub use transport::{
    Channel, Dialer, LoopbackDialer, LoopbackNetwork, Router, TcpDialer, TcpEndpoint,
};

/// Longest heritage accepted in a header.
pub const MAX_WIRE_CERTS: usize = 16;
pub const MAX_FRAME_BYTES: usize = 16 << 20;

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("bad authentication header: {0}")]
    Header(String),
    #[error("bad frame: {0}")]
    Frame(String),
}
