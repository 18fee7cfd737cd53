//! Authenticated transports. Whatever carries the frames must tell the
//! server which key the peer proved possession of, and tell the client
//! that it reached the service it meant to reach.
//!
//! The TCP transport runs a signed handshake before exchanging
//! length-prefixed frames:
//!
//! ```text
//! C -> S  CODECAP/1 HELLO <client pub hex> <client nonce hex>
//! S -> C  CODECAP/1 HELLO <server pub hex> <server nonce hex> <server sig hex>
//! C -> S  CODECAP/1 PROOF <client sig hex>
//! S -> C  CODECAP/1 READY
//! ```
//!
//! Both signatures cover both keys and both nonces, with a role label.
//! The channel is authenticated but not encrypted.

use std::collections::{HashMap, HashSet};
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, RwLock};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use rand::RngCore;

use crate::certchain::{KeyPair, PublicKey};
use crate::objectsvc::CallError;

use super::server::FrameHandler;
use super::MAX_FRAME_BYTES;

/// One authenticated connection to a service.
pub trait Channel: Send {
    fn roundtrip(&mut self, frame: &[u8]) -> Result<Vec<u8>, CallError>;
}

/// Opens channels to a service, proving `me` and checking that the far
/// end holds `service`.
pub trait Dialer: Send + Sync {
    fn dial(&self, service: &PublicKey, me: &KeyPair) -> Result<Box<dyn Channel>, CallError>;
}

impl<D: Dialer + ?Sized> Dialer for Arc<D> {
    fn dial(&self, service: &PublicKey, me: &KeyPair) -> Result<Box<dyn Channel>, CallError> {
        (**self).dial(service, me)
    }
}

impl Dialer for &dyn Dialer {
    fn dial(&self, service: &PublicKey, me: &KeyPair) -> Result<Box<dyn Channel>, CallError> {
        (**self).dial(service, me)
    }
}

fn wrong_key(expected: &PublicKey, got: &PublicKey) -> CallError {
    CallError::Authentication(format!("expected service key {expected}, peer proved {got}"))
}

/// In-process endpoints addressed by name.
#[derive(Default)]
pub struct LoopbackNetwork {
    endpoints: RwLock<HashMap<String, Arc<dyn FrameHandler>>>,
    down: RwLock<HashSet<String>>,
}

impl LoopbackNetwork {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn listen(&self, name: &str, server: Arc<dyn FrameHandler>) {
        self.endpoints.write().unwrap().insert(name.to_string(), server);
    }

    pub fn set_down(&self, name: &str, down: bool) {
        let mut set = self.down.write().unwrap();
        if down {
            set.insert(name.to_string());
        } else {
            set.remove(name);
        }
    }

    pub fn endpoint(self: &Arc<Self>, name: &str) -> LoopbackDialer {
        LoopbackDialer {
            net: self.clone(),
            name: name.to_string(),
        }
    }
}

pub struct LoopbackDialer {
    net: Arc<LoopbackNetwork>,
    name: String,
}

struct LoopbackChannel {
    server: Arc<dyn FrameHandler>,
    peer: PublicKey,
}

impl Channel for LoopbackChannel {
    fn roundtrip(&mut self, frame: &[u8]) -> Result<Vec<u8>, CallError> {
        Ok(self.server.serve_frame(frame, Some(&self.peer)))
    }
}

impl Dialer for LoopbackDialer {
    fn dial(&self, service: &PublicKey, me: &KeyPair) -> Result<Box<dyn Channel>, CallError> {
        if self.net.down.read().unwrap().contains(&self.name) {
            return Err(CallError::Unreachable(format!("{} is down", self.name)));
        }
        let server = self
            .net
            .endpoints
            .read()
            .unwrap()
            .get(&self.name)
            .cloned()
            .ok_or_else(|| CallError::Unreachable(format!("nothing listening at {}", self.name)))?;
        if server.service_key() != *service {
            return Err(wrong_key(service, &server.service_key()));
        }
        Ok(Box::new(LoopbackChannel {
            server,
            peer: me.public_key(),
        }))
    }
}

/// Routes each service key to its own dialer.
#[derive(Default)]
pub struct Router {
    routes: HashMap<PublicKey, Box<dyn Dialer>>,
}

impl Router {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn route(&mut self, service: PublicKey, dialer: impl Dialer + 'static) {
        self.routes.insert(service, Box::new(dialer));
    }
}

impl Dialer for Router {
    fn dial(&self, service: &PublicKey, me: &KeyPair) -> Result<Box<dyn Channel>, CallError> {
        self.routes
            .get(service)
            .ok_or_else(|| CallError::Unreachable(format!("no route to service {service}")))?
            .dial(service, me)
    }
}

const HANDSHAKE_LABEL: &[u8] = b"codecap-handshake-v1";
const IO_TIMEOUT: Duration = Duration::from_secs(30);
const MAX_LINE: u64 = 512;

fn transcript(role: &[u8], client: &PublicKey, cn: &[u8], server: &PublicKey, sn: &[u8]) -> Vec<u8> {
    let mut t = HANDSHAKE_LABEL.to_vec();
    t.push(0);
    t.extend_from_slice(role);
    t.push(0);
    t.extend_from_slice(client.as_bytes());
    t.extend_from_slice(cn);
    t.extend_from_slice(server.as_bytes());
    t.extend_from_slice(sn);
    t
}

fn nonce() -> [u8; 16] {
    let mut n = [0u8; 16];
    rand::thread_rng().fill_bytes(&mut n);
    n
}

fn read_line(r: &mut impl BufRead) -> io::Result<Vec<String>> {
    let mut line = String::new();
    r.by_ref().take(MAX_LINE).read_line(&mut line)?;
    if !line.ends_with('\n') {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "handshake line too long or truncated"));
    }
    Ok(line.split_whitespace().map(str::to_string).collect())
}

fn expect<'a>(words: &'a [String], verb: &str, n: usize) -> io::Result<&'a [String]> {
    match words {
        [v, kind, rest @ ..] if v == "CODECAP/1" && kind == verb && rest.len() == n => Ok(rest),
        _ => Err(io::Error::new(io::ErrorKind::InvalidData, format!("expected {verb}"))),
    }
}

fn parse_key(s: &str) -> io::Result<PublicKey> {
    PublicKey::from_hex(s).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))
}

fn parse_hex(s: &str) -> io::Result<Vec<u8>> {
    hex::decode(s).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()))
}

fn write_frame(w: &mut impl Write, bytes: &[u8]) -> io::Result<()> {
    w.write_all(&(bytes.len() as u32).to_be_bytes())?;
    w.write_all(bytes)?;
    w.flush()
}

/// `Ok(None)` on a clean close between frames.
fn read_frame(r: &mut impl Read) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME_BYTES {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "frame too large"));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(Some(buf))
}

/// Server half of the handshake. Returns the client's proven key.
fn accept_handshake(stream: &TcpStream, key: &KeyPair) -> io::Result<PublicKey> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = stream;
    let words = read_line(&mut reader)?;
    let hello = expect(&words, "HELLO", 2)?;
    let client = parse_key(&hello[0])?;
    let cn = parse_hex(&hello[1])?;
    let sn = nonce();
    let me = key.public_key();
    let sig = key.sign(&transcript(b"server", &client, &cn, &me, &sn));
    writeln!(writer, "CODECAP/1 HELLO {} {} {}", me.to_hex(), hex::encode(sn), hex::encode(sig))?;
    let words = read_line(&mut reader)?;
    let proof = parse_hex(&expect(&words, "PROOF", 1)?[0])?;
    if !client.verify(&transcript(b"client", &client, &cn, &me, &sn), &proof) {
        return Err(io::Error::new(io::ErrorKind::PermissionDenied, "client proof does not verify"));
    }
    writeln!(writer, "CODECAP/1 READY")?;
    Ok(client)
}

fn serve_connection(stream: TcpStream, key: &KeyPair, server: &dyn FrameHandler) -> io::Result<()> {
    stream.set_read_timeout(Some(IO_TIMEOUT))?;
    stream.set_write_timeout(Some(IO_TIMEOUT))?;
    let peer = accept_handshake(&stream, key)?;
    let mut reader = &stream;
    while let Some(frame) = read_frame(&mut reader)? {
        let out = server.serve_frame(&frame, Some(&peer));
        write_frame(&mut &stream, &out)?;
    }
    Ok(())
}

/// A listening TCP endpoint. Dropping it stops accepting connections.
pub struct TcpEndpoint {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl TcpEndpoint {
    pub fn bind(addr: impl ToSocketAddrs, key: KeyPair, server: Arc<dyn FrameHandler>) -> io::Result<Self> {
        if key.public_key() != server.service_key() {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                "transport key differs from the service key",
            ));
        }
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let key = Arc::new(key);
        let thread = thread::spawn(move || {
            for stream in listener.incoming() {
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let (key, server) = (key.clone(), server.clone());
                thread::spawn(move || {
                    if let Err(e) = serve_connection(stream, &key, server.as_ref()) {
                        log::debug!("connection closed: {e}");
                    }
                });
            }
        });
        Ok(TcpEndpoint {
            addr,
            stop,
            thread: Some(thread),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the accept loop ends.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for TcpEndpoint {
    fn drop(&mut self) {
        if let Some(t) = self.thread.take() {
            self.stop.store(true, Ordering::SeqCst);
            let _ = TcpStream::connect(self.addr);
            let _ = t.join();
        }
    }
}

/// Dials a TCP endpoint at a fixed address.
pub struct TcpDialer {
    addr: String,
}

impl TcpDialer {
    pub fn new(addr: impl Into<String>) -> Self {
        TcpDialer { addr: addr.into() }
    }
}

struct TcpChannel {
    stream: TcpStream,
}

impl Channel for TcpChannel {
    fn roundtrip(&mut self, frame: &[u8]) -> Result<Vec<u8>, CallError> {
        let io = |e: io::Error| CallError::Unreachable(e.to_string());
        write_frame(&mut self.stream, frame).map_err(io)?;
        read_frame(&mut self.stream)
            .map_err(io)?
            .ok_or_else(|| CallError::Protocol("connection closed before the response".into()))
    }
}

impl Drop for TcpChannel {
    fn drop(&mut self) {
        let _ = self.stream.shutdown(Shutdown::Both);
    }
}

impl Dialer for TcpDialer {
    fn dial(&self, service: &PublicKey, me: &KeyPair) -> Result<Box<dyn Channel>, CallError> {
        let unreachable = |e: io::Error| CallError::Unreachable(format!("{}: {e}", self.addr));
        let auth = |e: io::Error| CallError::Authentication(e.to_string());
        let stream = TcpStream::connect(&self.addr).map_err(unreachable)?;
        stream.set_read_timeout(Some(IO_TIMEOUT)).map_err(unreachable)?;
        stream.set_write_timeout(Some(IO_TIMEOUT)).map_err(unreachable)?;
        let mut reader = BufReader::new(stream.try_clone().map_err(unreachable)?);
        let mut writer = &stream;

        let client = me.public_key();
        let cn = nonce();
        writeln!(writer, "CODECAP/1 HELLO {} {}", client.to_hex(), hex::encode(cn)).map_err(unreachable)?;
        let words = read_line(&mut reader).map_err(auth)?;
        let hello = expect(&words, "HELLO", 3).map_err(auth)?;
        let server = parse_key(&hello[0]).map_err(auth)?;
        let sn = parse_hex(&hello[1]).map_err(auth)?;
        let sig = parse_hex(&hello[2]).map_err(auth)?;
        if server != *service {
            return Err(wrong_key(service, &server));
        }
        if !server.verify(&transcript(b"server", &client, &cn, &server, &sn), &sig) {
            return Err(CallError::Authentication("server handshake signature does not verify".into()));
        }
        let proof = me.sign(&transcript(b"client", &client, &cn, &server, &sn));
        writeln!(writer, "CODECAP/1 PROOF {}", hex::encode(proof)).map_err(unreachable)?;
        let words = read_line(&mut reader).map_err(auth)?;
        expect(&words, "READY", 0).map_err(auth)?;
        Ok(Box::new(TcpChannel { stream }))
    }
}
