//! The object service: a versioned object store whose every request passes
//! through [`authorize`](crate::codecap::authorize) before dispatch.
//!
//! The target object of a request is named by `objectId` on the first
//! certificate of the presented heritage. Caps without an `objectId`
//! (factory caps) can only create objects or trigger a sweep.

mod connector;
mod gc;
mod store;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard, RwLock, Weak};
use std::thread;
use std::time::Duration;

use thiserror::Error;

use crate::attrs;
use crate::certchain::{
    decode_heritage, encode_heritage, unix_now, validate_heritage_at, AttrValue, CertBuilder,
    Heritage, KeyPair, PublicKey, RequestCert, ATTR_ISSUER_NAME, ATTR_OBJECT_ID, ATTR_VERSION,
};
use crate::codecap::{authorize, conjunction, AuthPolicy, FailingStage};
use crate::directory::{self, DirectoryTable, Row, ATTR_OBJECT_KIND};
use crate::rights::{RightsProgram, Value, DEFAULT_STEP_BUDGET};

pub use connector::{
    payload_digest, sign_call, CallError, Connector, LocalNetwork, ATTR_PAYLOAD_DIGEST,
};
pub use gc::{LinkStatus, SweepReport};
pub use store::{ObjectKind, ObjectRecord, PrimaryLink};

pub const READ: &str = "READ";
pub const WRITE: &str = "WRITE";
pub const CREATE: &str = "CREATE";
pub const DESTROY: &str = "DESTROY";
pub const BUMPVERSION: &str = "BUMPVERSION";
pub const DELEGATEONBEHALF: &str = "DELEGATEONBEHALF";
pub const REGISTERLINK: &str = "REGISTERLINK";
pub const GCSWEEP: &str = "GCSWEEP";

/// Group column of the service's lost+found directory.
pub const LOST_FOUND_GROUP: &str = "admin";
/// Directory seeded from [`ServiceConfig::yellow_pages`].
pub const YELLOW_PAGES_ID: &str = "yellow-pages";
pub const YELLOW_PAGES_GROUP: &str = "public";

pub struct ServiceConfig {
    pub service_key: KeyPair,
    /// Subject identifier announced in challenges.
    pub realm: String,
    pub step_budget: u64,
    pub gc_period: Duration,
    pub allow_unauthenticated_transport: bool,
    pub lost_found_directory: Option<String>,
    /// Seconds a request timestamp may differ from the server clock; also
    /// how long nonces are remembered.
    pub replay_window: i64,
    pub store_dir: Option<PathBuf>,
    /// Well-known heritages published in the yellow-pages directory.
    pub yellow_pages: Vec<(String, Heritage)>,
}

impl ServiceConfig {
    pub fn new(service_key: KeyPair) -> Self {
        ServiceConfig {
            realm: service_key.public_key().to_hex(),
            service_key,
            step_budget: DEFAULT_STEP_BUDGET,
            gc_period: Duration::from_secs(60),
            allow_unauthenticated_transport: false,
            lost_found_directory: Some("lost+found".into()),
            replay_window: 300,
            store_dir: None,
            yellow_pages: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum ServiceError {
    #[error("denied at {0}")]
    Denied(FailingStage),
    #[error("unknown object")]
    UnknownObject,
    #[error("unsupported request `{0}`")]
    Unsupported(String),
    #[error("replay")]
    Replay,
    #[error("malformed request: {0}")]
    BadRequest(String),
    #[error("no such name `{0}`")]
    NoSuchName(String),
    #[error("no such group `{0}`")]
    NoSuchGroup(String),
    #[error("depth exhausted")]
    DepthExhausted,
    #[error("not a directory")]
    NotADirectory,
    #[error("cannot extend foreign cap")]
    ForeignCap,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("storage failure: {0}")]
    Storage(String),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::Denied(_) => "denied",
            ServiceError::UnknownObject => "unknown_object",
            ServiceError::Unsupported(_) => "unsupported",
            ServiceError::Replay => "replay",
            ServiceError::BadRequest(_) => "bad_request",
            ServiceError::NoSuchName(_) => "no_such_name",
            ServiceError::NoSuchGroup(_) => "no_such_group",
            ServiceError::DepthExhausted => "depth_exhausted",
            ServiceError::NotADirectory => "not_a_directory",
            ServiceError::ForeignCap => "foreign_cap",
            ServiceError::Config(_) | ServiceError::Storage(_) => "internal",
        }
    }

    pub fn status(&self) -> u16 {
        match self {
            ServiceError::Denied(_) => 403,
            ServiceError::UnknownObject | ServiceError::NoSuchName(_) => 404,
            ServiceError::Replay => 409,
            ServiceError::Config(_) | ServiceError::Storage(_) => 500,
            _ => 400,
        }
    }
}

impl From<std::io::Error> for ServiceError {
    fn from(e: std::io::Error) -> Self {
        ServiceError::Storage(e.to_string())
    }
}

fn bad(msg: impl Into<String>) -> ServiceError {
    ServiceError::BadRequest(msg.into())
}

/// What a request produces: a status code, bytes and, on failure, a
/// short error code and the failing authorization stage.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Response {
    pub status: u16,
    pub payload: Vec<u8>,
    pub stage: Option<String>,
    pub error: Option<String>,
    /// Set on challenges.
    pub realm: Option<String>,
}

impl Response {
    pub fn ok(payload: Vec<u8>) -> Self {
        Response {
            status: 200,
            payload,
            stage: None,
            error: None,
            realm: None,
        }
    }

    /// Only the stage code of a denial leaves the service; rights-function
    /// diagnostics stay behind.
    pub fn from_error(e: &ServiceError) -> Self {
        let (payload, stage) = match e {
            ServiceError::Denied(stage) => (format!("denied at {}", stage.code()), Some(stage.code())),
            other => (other.to_string(), None),
        };
        Response {
            status: e.status(),
            payload: payload.into_bytes(),
            stage,
            error: Some(e.code().to_string()),
            realm: None,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == 200
    }

    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.payload).into_owned()
    }
}

struct Inner {
    store: store::Store,
    /// `(signer, nonce)` → request timestamp.
    nonces: HashMap<(PublicKey, String), i64>,
}

pub struct ObjectService {
    config: ServiceConfig,
    inner: Mutex<Inner>,
    connector: RwLock<Option<Arc<dyn Connector>>>,
}

/// The `state` record rights functions see.
fn state_value(record: &ObjectRecord) -> Value {
    let mut fields = std::collections::BTreeMap::new();
    if let Ok(body) = std::str::from_utf8(&record.state) {
        fields.insert("body".to_string(), Value::str(body));
    }
    fields.insert("length".to_string(), Value::Int(record.state.len() as i64));
    Value::record(fields)
}

fn req_str<'a>(r: &'a RequestCert, name: &str) -> Result<&'a str, ServiceError> {
    r.str_attr(name)
        .ok_or_else(|| bad(format!("missing string attribute `{name}`")))
}

fn opt_nonneg(r: &RequestCert, name: &str) -> Result<Option<usize>, ServiceError> {
    match r.get(name) {
        None => Ok(None),
        Some(AttrValue::Int(i)) if *i >= 0 => Ok(Some(*i as usize)),
        Some(_) => Err(bad(format!("`{name}` must be a non-negative integer"))),
    }
}

fn check_rights(src: &str) -> Result<(), ServiceError> {
    RightsProgram::parse(src)
        .map(|_| ())
        .map_err(|e| bad(format!("invalid rights function: {e}")))
}

impl ObjectService {
    pub fn open(config: ServiceConfig) -> Result<Self, ServiceError> {
        if config.step_budget < 1 {
            return Err(ServiceError::Config("step_budget must be at least 1".into()));
        }
        if config.gc_period.is_zero() {
            return Err(ServiceError::Config("gc_period must be positive".into()));
        }
        let store = store::Store::open(config.store_dir.as_deref())?;
        let svc = ObjectService {
            config,
            inner: Mutex::new(Inner {
                store,
                nonces: HashMap::new(),
            }),
            connector: RwLock::new(None),
        };
        if let Some(id) = svc.config.lost_found_directory.clone() {
            svc.ensure_directory(&id, &[LOST_FOUND_GROUP])?;
        }
        if !svc.config.yellow_pages.is_empty() {
            svc.seed_yellow_pages()?;
        }
        Ok(svc)
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn public_key(&self) -> PublicKey {
        self.config.service_key.public_key()
    }

    pub fn realm(&self) -> &str {
        &self.config.realm
    }

    /// Route used to probe primary links hosted elsewhere.
    pub fn set_connector(&self, connector: Arc<dyn Connector>) {
        *self.connector.write().unwrap() = Some(connector);
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn object(&self, id: &str) -> Option<ObjectRecord> {
        self.lock().store.objects.get(id).cloned()
    }

    pub fn object_ids(&self) -> Vec<String> {
        self.lock().store.objects.keys().cloned().collect()
    }

    pub fn object_count(&self) -> usize {
        self.lock().store.objects.len()
    }

    fn ensure_directory(&self, id: &str, groups: &[&str]) -> Result<(), ServiceError> {
        if !store::valid_object_id(id) {
            return Err(ServiceError::Config(format!("`{id}` is not a usable object id")));
        }
        let mut inner = self.lock();
        if inner.store.is_known(id) {
            return Ok(());
        }
        let table = DirectoryTable::with_groups(groups.iter().copied())
            .map_err(|e| ServiceError::Config(e.to_string()))?;
        let record = ObjectRecord::new(id, ObjectKind::Directory, table.encode(), unix_now());
        inner.store.put(record)?;
        Ok(())
    }

    fn seed_yellow_pages(&self) -> Result<(), ServiceError> {
        self.ensure_directory(YELLOW_PAGES_ID, &[YELLOW_PAGES_GROUP])?;
        let mut inner = self.lock();
        let Some(mut record) = inner.store.objects.get(YELLOW_PAGES_ID).cloned() else {
            return Ok(());
        };
        let mut table = DirectoryTable::decode(&record.state)
            .map_err(|e| ServiceError::Config(e.to_string()))?;
        for (name, h) in &self.config.yellow_pages {
            if h.tail_key() != Some(self.public_key()) {
                return Err(ServiceError::Config(format!(
                    "yellow-pages entry `{name}` does not end at the service key"
                )));
            }
            let mut group_rights = std::collections::BTreeMap::new();
            group_rights.insert(YELLOW_PAGES_GROUP.to_string(), "1".to_string());
            table
                .insert(name, Row { cap: h.clone(), group_rights })
                .map_err(|e| ServiceError::Config(e.to_string()))?;
        }
        record.state = table.encode();
        inner.store.put(record)?;
        Ok(())
    }

    /// Builds the one-certificate heritage for `subject` on `record`.
    fn mint_for(
        &self,
        record: &ObjectRecord,
        subject: &PublicKey,
        rights: &str,
        p_length: i64,
    ) -> Result<Heritage, ServiceError> {
        check_rights(rights)?;
        if p_length < 0 {
            return Err(bad("pLength must be non-negative"));
        }
        let kind = (record.kind == ObjectKind::Directory).then_some("directory");
        let cert = CertBuilder::new(subject, &self.public_key(), rights, p_length)
            .attr(ATTR_ISSUER_NAME, self.config.realm.as_str())
            .attr(ATTR_OBJECT_ID, record.object_id.as_str())
            .attr(ATTR_VERSION, record.version)
            .maybe_attr(ATTR_OBJECT_KIND, kind)
            .sign(&self.config.service_key)
            .map_err(|e| bad(e.to_string()))?;
        Ok(Heritage::single(cert))
    }

    /// Mints a fresh cap on an existing object at its current version.
    pub fn mint(
        &self,
        object_id: &str,
        subject: &PublicKey,
        rights: &str,
        p_length: i64,
    ) -> Result<Heritage, ServiceError> {
        let record = self.object(object_id).ok_or(ServiceError::UnknownObject)?;
        self.mint_for(&record, subject, rights, p_length)
    }

    /// Mints a cap naming no object, e.g. one whose rights admit CREATE.
    pub fn mint_factory(
        &self,
        subject: &PublicKey,
        rights: &str,
        p_length: i64,
    ) -> Result<Heritage, ServiceError> {
        check_rights(rights)?;
        let cert = CertBuilder::new(subject, &self.public_key(), rights, p_length)
            .attr(ATTR_ISSUER_NAME, self.config.realm.as_str())
            .sign(&self.config.service_key)
            .map_err(|e| bad(e.to_string()))?;
        Ok(Heritage::single(cert))
    }

    /// Creates an object directly, bypassing authorization (operator use).
    pub fn create_object(&self, kind: ObjectKind, groups: &[&str]) -> Result<String, ServiceError> {
        let mut inner = self.lock();
        let record = self.new_record(&inner, kind, groups)?;
        let id = record.object_id.clone();
        inner.store.put(record)?;
        Ok(id)
    }

    fn new_record(
        &self,
        inner: &Inner,
        kind: ObjectKind,
        groups: &[&str],
    ) -> Result<ObjectRecord, ServiceError> {
        let state = match kind {
            ObjectKind::Plain => Vec::new(),
            ObjectKind::Directory => DirectoryTable::with_groups(groups.iter().copied())
                .map_err(|e| bad(e.to_string()))?
                .encode(),
        };
        let id = loop {
            let id = uuid::Uuid::new_v4().to_string();
            if !inner.store.is_known(&id) {
                break id;
            }
        };
        Ok(ObjectRecord::new(&id, kind, state, unix_now()))
    }

    /// Executes a request and renders the outcome as a [`Response`].
    pub fn handle_request(
        &self,
        h: &Heritage,
        r: &RequestCert,
        transport: Option<&PublicKey>,
        payload: &[u8],
        now: i64,
    ) -> Response {
        match self.execute(h, r, transport, payload, now) {
            Ok(bytes) => Response::ok(bytes),
            Err(e) => {
                log::debug!("request refused: {e}");
                Response::from_error(&e)
            }
        }
    }

    /// Typed form of [`handle_request`](Self::handle_request).
    pub fn execute(
        &self,
        h: &Heritage,
        r: &RequestCert,
        transport: Option<&PublicKey>,
        payload: &[u8],
        now: i64,
    ) -> Result<Vec<u8>, ServiceError> {
        let mut inner = self.lock();
        self.admit(&mut inner, h, r, transport, payload, now)?;
        let ty = r.request_type().ok_or_else(|| bad("missing `type`"))?.to_string();
        if ty == GCSWEEP {
            drop(inner);
            return Ok(self.gc_sweep(now).to_string().into_bytes());
        }
        if ty == CREATE {
            return self.create(&mut inner, r);
        }
        let id = h
            .first()
            .object_id()
            .ok_or_else(|| bad("capability names no object"))?
            .to_string();
        let mut record = inner
            .store
            .objects
            .get(&id)
            .cloned()
            .ok_or(ServiceError::UnknownObject)?;
        match ty.as_str() {
            READ => {
                let len = record.state.len();
                let offset = opt_nonneg(r, "offset")?.unwrap_or(0);
                if offset > len {
                    return Err(bad("offset beyond end of state"));
                }
                let end = match opt_nonneg(r, "length")? {
                    Some(n) => offset.saturating_add(n).min(len),
                    None => len,
                };
                Ok(record.state[offset..end].to_vec())
            }
            WRITE => {
                if record.kind == ObjectKind::Directory {
                    return Err(bad("directory state changes only through directory requests"));
                }
                let value = match r.get("value") {
                    Some(AttrValue::Str(s)) => s.as_bytes().to_vec(),
                    Some(AttrValue::Bytes(b)) => b.clone(),
                    Some(_) => return Err(bad("`value` must be a string or bytes")),
                    None if !payload.is_empty() => payload.to_vec(),
                    None => return Err(bad("WRITE needs a `value` or a payload")),
                };
                match opt_nonneg(r, "offset")? {
                    None => record.state = value,
                    Some(offset) if offset <= record.state.len() => {
                        let end = (offset + value.len()).min(record.state.len());
                        record.state.splice(offset..end, value);
                    }
                    Some(_) => return Err(bad("offset beyond end of state")),
                }
                inner.store.put(record)?;
                Ok(Vec::new())
            }
            DESTROY => {
                inner.store.destroy(&id)?;
                Ok(Vec::new())
            }
            BUMPVERSION => {
                record.version += 1;
                inner.store.put(record.clone())?;
                let rights = chain_rights(h);
                let p = h.last().p_length().unwrap_or(0);
                let signer = r.signer().ok_or_else(|| bad("missing signer"))?;
                let fresh = self.mint_for(&record, &signer, &rights, p)?;
                Ok(encode_heritage(&fresh).into_bytes())
            }
            DELEGATEONBEHALF => {
                let target = PublicKey::from_hex(req_str(r, "targetPubkey")?)
                    .map_err(|_| bad("targetPubkey must be 64 hex characters"))?;
                let requested = req_str(r, "rights")?;
                check_rights(requested)?;
                let p = r
                    .int_attr("pLength")
                    .ok_or_else(|| bad("missing integer attribute `pLength`"))?;
                let holder = h.last().p_length().unwrap_or(0);
                if p < 0 || p > holder {
                    return Err(bad(format!(
                        "pLength {p} exceeds the requester's remaining depth {holder}"
                    )));
                }
                let rights = conjunction(
                    h.certs()
                        .iter()
                        .filter_map(|c| c.rights())
                        .chain(std::iter::once(requested)),
                );
                let minted = self.mint_for(&record, &target, &rights, p)?;
                Ok(encode_heritage(&minted).into_bytes())
            }
            REGISTERLINK => {
                let link = self.parse_link(r, now)?;
                if !record.primary_links.contains(&link) {
                    record.primary_links.push(link);
                    inner.store.put(record)?;
                }
                Ok(Vec::new())
            }
            verb if directory::is_verb(verb) => {
                if record.kind != ObjectKind::Directory {
                    return Err(ServiceError::NotADirectory);
                }
                let mut table = DirectoryTable::decode(&record.state)
                    .map_err(|e| ServiceError::Storage(e.to_string()))?;
                let out = directory::execute_verb(verb, &mut table, r, &self.config.service_key, now)?;
                if out.changed {
                    record.state = table.encode();
                    inner.store.put(record)?;
                }
                Ok(out.payload)
            }
            other => Err(ServiceError::Unsupported(other.to_string())),
        }
    }

    /// Authorization, replay suppression and payload binding.
    fn admit(
        &self,
        inner: &mut Inner,
        h: &Heritage,
        r: &RequestCert,
        transport: Option<&PublicKey>,
        payload: &[u8],
        now: i64,
    ) -> Result<(), ServiceError> {
        let target = h.first().object_id();
        let decision = {
            let objects = &inner.store.objects;
            let state = target.and_then(|id| objects.get(id)).map(state_value);
            let versions = |id: &str| objects.get(id).map(|o| o.version);
            let policy = AuthPolicy {
                root: self.public_key(),
                now,
                step_budget: self.config.step_budget,
                allow_unauthenticated_transport: self.config.allow_unauthenticated_transport,
                versions: Some(&versions),
            };
            authorize(&policy, h, r, transport, state.as_ref())
        };
        if let Some(stage) = decision.failing_stage {
            let missing = target.is_some_and(|id| !inner.store.objects.contains_key(id));
            if stage == FailingStage::Version && missing {
                return Err(ServiceError::UnknownObject);
            }
            return Err(ServiceError::Denied(stage));
        }

        let (Some(nonce), Some(ts)) = (r.nonce(), r.timestamp()) else {
            return Err(bad("request lacks nonce or timestamp"));
        };
        let window = self.config.replay_window;
        if (now - ts).abs() > window {
            return Err(ServiceError::Replay);
        }
        let signer = r.signer().ok_or_else(|| bad("missing signer"))?;
        let key = (signer, nonce.to_string());
        if inner.nonces.contains_key(&key) {
            return Err(ServiceError::Replay);
        }
        if inner.nonces.len() >= 4096 {
            inner.nonces.retain(|_, seen| (now - *seen).abs() <= window);
        }
        inner.nonces.insert(key, ts);

        if !payload.is_empty() && r.str_attr(ATTR_PAYLOAD_DIGEST) != Some(&payload_digest(payload)) {
            return Err(bad("payload does not match the signed digest"));
        }
        Ok(())
    }

    fn create(&self, inner: &mut Inner, r: &RequestCert) -> Result<Vec<u8>, ServiceError> {
        let rights = req_str(r, "rightsForCreator")?;
        let p = r
            .int_attr("pLength")
            .ok_or_else(|| bad("missing integer attribute `pLength`"))?;
        let kind = match r.str_attr("kind") {
            None => ObjectKind::Plain,
            Some(k) => ObjectKind::parse(k).ok_or_else(|| bad(format!("unknown kind `{k}`")))?,
        };
        let groups: Vec<&str> = r
            .str_attr("groups")
            .map(|g| g.split(',').filter(|s| !s.is_empty()).collect())
            .unwrap_or_default();
        let signer = r.signer().ok_or_else(|| bad("missing signer"))?;
        let record = self.new_record(inner, kind, &groups)?;
        let h = self.mint_for(&record, &signer, rights, p)?;
        inner.store.put(record)?;
        Ok(encode_heritage(&h).into_bytes())
    }

    fn parse_link(&self, r: &RequestCert, now: i64) -> Result<PrimaryLink, ServiceError> {
        let h = decode_heritage(req_str(r, "heritage")?).map_err(|e| bad(e.to_string()))?;
        if h.tail_key() != Some(self.public_key()) {
            return Err(ServiceError::ForeignCap);
        }
        let root = h.root_key().ok_or_else(|| bad("heritage has no root"))?;
        validate_heritage_at(&root, &h, now).map_err(|e| bad(e.to_string()))?;
        Ok(PrimaryLink {
            directory_heritage: h,
            row_name: req_str(r, "row")?.to_string(),
            group: req_str(r, "group")?.to_string(),
        })
    }

    /// Registers a primary link directly (operator use).
    pub fn add_primary_link(&self, object_id: &str, link: PrimaryLink) -> Result<(), ServiceError> {
        let mut inner = self.lock();
        let mut record = inner
            .store
            .objects
            .get(object_id)
            .cloned()
            .ok_or(ServiceError::UnknownObject)?;
        if link.directory_heritage.tail_key() != Some(self.public_key()) {
            return Err(ServiceError::ForeignCap);
        }
        if !record.primary_links.contains(&link) {
            record.primary_links.push(link);
            inner.store.put(record)?;
        }
        Ok(())
    }

    /// Runs [`gc_sweep`](Self::gc_sweep) every `gc_period` until the
    /// service is dropped.
    pub fn spawn_gc(self: &Arc<Self>) -> thread::JoinHandle<()> {
        let weak: Weak<Self> = Arc::downgrade(self);
        let period = self.config.gc_period;
        thread::spawn(move || loop {
            thread::sleep(period);
            let Some(svc) = weak.upgrade() else { return };
            let report = svc.gc_sweep(unix_now());
            log::info!("gc sweep: {report}");
        })
    }
}

/// Conjunction of every rights function on `h`.
fn chain_rights(h: &Heritage) -> String {
    conjunction(h.certs().iter().filter_map(|c| c.rights()))
}

/// Request attributes for the built-in request types, for clients.
pub fn read_request(offset: Option<i64>, length: Option<i64>) -> crate::certchain::AttrMap {
    let mut m = attrs! { "type" => READ };
    if let Some(o) = offset {
        m.insert("offset".into(), AttrValue::Int(o));
    }
    if let Some(l) = length {
        m.insert("length".into(), AttrValue::Int(l));
    }
    m
}
