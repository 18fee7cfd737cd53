//! Python bindings: keys, heritages, codecaps, request certificates,
//! authorization, an in-process object service and the wire header.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyTypeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyBytes, PyDict};

use codecaps::certchain::{
    decode_heritage, decode_request, encode_heritage, encode_request, unix_now,
    validate_heritage_at, AttrMap, AttrValue, Heritage, KeyPair, PublicKey, RequestCert,
};
use codecaps::codecap::{self as cc, AuthPolicy, Codecap};
use codecaps::objectsvc::{sign_call, ObjectKind, ObjectService, Response, ServiceConfig};
use codecaps::rights::{Cause, DEFAULT_STEP_BUDGET};
use codecaps::wire::{self, FrameHandler, Server};

fn value_err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn pubkey(hex: &str) -> PyResult<PublicKey> {
    PublicKey::from_hex(hex).map_err(value_err)
}

fn attrs_from_dict(d: &Bound<'_, PyDict>) -> PyResult<AttrMap> {
    let mut out = AttrMap::new();
    for (k, v) in d.iter() {
        let name: String = k.extract()?;
        let value = if v.is_instance_of::<PyBool>() {
            AttrValue::Bool(v.extract()?)
        } else if let Ok(i) = v.extract::<i64>() {
            AttrValue::Int(i)
        } else if let Ok(s) = v.extract::<String>() {
            AttrValue::Str(s)
        } else if v.is_instance_of::<PyBytes>() {
            AttrValue::Bytes(v.extract::<Vec<u8>>()?)
        } else {
            return Err(PyTypeError::new_err(format!(
                "attribute `{name}` must be str, int, bool or bytes"
            )));
        };
        out.insert(name, value);
    }
    Ok(out)
}

fn attrs_to_dict<'py>(py: Python<'py>, attrs: &AttrMap) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    for (k, v) in attrs {
        match v {
            AttrValue::Str(s) => d.set_item(k, s)?,
            AttrValue::Int(i) => d.set_item(k, i)?,
            AttrValue::Bool(b) => d.set_item(k, b)?,
            AttrValue::Bytes(b) => d.set_item(k, PyBytes::new(py, b))?,
        }
    }
    Ok(d)
}

#[pyclass(name = "KeyPair", module = "codecaps", frozen)]
struct PyKeyPair {
    inner: KeyPair,
}

#[pymethods]
impl PyKeyPair {
    /// Random key, or deterministic from a 32-byte seed.
    #[new]
    #[pyo3(signature = (seed=None))]
    fn new(seed: Option<&[u8]>) -> PyResult<Self> {
        Ok(PyKeyPair {
            inner: KeyPair::generate_with(seed).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn from_key_file(text: &str) -> PyResult<Self> {
        Ok(PyKeyPair {
            inner: KeyPair::from_key_file(text).map_err(value_err)?,
        })
    }

    fn to_key_file(&self) -> String {
        self.inner.to_key_file()
    }

    #[getter]
    fn public_key(&self) -> String {
        self.inner.public_key().to_hex()
    }

    fn sign<'py>(&self, py: Python<'py>, message: &[u8]) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.sign(message))
    }

    fn __repr__(&self) -> String {
        format!("KeyPair(public_key='{}')", self.public_key())
    }
}

#[pyclass(name = "Heritage", module = "codecaps", frozen, eq)]
#[derive(PartialEq)]
struct PyHeritage {
    inner: Heritage,
}

#[pymethods]
impl PyHeritage {
    #[staticmethod]
    fn from_armor(text: &str) -> PyResult<Self> {
        Ok(PyHeritage {
            inner: decode_heritage(text).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn from_auth_header(line: &str) -> PyResult<Self> {
        Ok(PyHeritage {
            inner: wire::parse_auth_header(line).map_err(value_err)?,
        })
    }

    fn armor(&self) -> String {
        encode_heritage(&self.inner)
    }

    fn auth_header(&self) -> String {
        wire::encode_auth_header(&self.inner)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Attributes of each certificate, `C_1` first.
    fn certs<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.inner.certs().iter().map(|c| attrs_to_dict(py, c.attrs())).collect()
    }

    #[getter]
    fn root_key(&self) -> Option<String> {
        self.inner.root_key().map(|k| k.to_hex())
    }

    #[getter]
    fn tail_key(&self) -> Option<String> {
        self.inner.tail_key().map(|k| k.to_hex())
    }

    fn prefix(&self, len: usize) -> PyResult<Self> {
        if len == 0 || len > self.inner.len() {
            return Err(PyValueError::new_err("prefix length out of range"));
        }
        Ok(PyHeritage {
            inner: self.inner.prefix(len),
        })
    }

    /// Raises `ValueError("chain break at cert N: ...")` on failure.
    #[pyo3(signature = (root, now=None))]
    fn validate(&self, root: &str, now: Option<i64>) -> PyResult<()> {
        validate_heritage_at(&pubkey(root)?, &self.inner, now.unwrap_or_else(unix_now)).map_err(value_err)
    }

    fn __repr__(&self) -> String {
        format!("Heritage(len={})", self.inner.len())
    }
}

#[pyclass(name = "Request", module = "codecaps", frozen)]
struct PyRequest {
    inner: RequestCert,
}

#[pymethods]
impl PyRequest {
    #[staticmethod]
    fn from_armor(text: &str) -> PyResult<Self> {
        Ok(PyRequest {
            inner: decode_request(text).map_err(value_err)?,
        })
    }

    fn armor(&self) -> String {
        encode_request(&self.inner)
    }

    fn attrs<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        attrs_to_dict(py, self.inner.attrs())
    }

    #[getter]
    fn signer(&self) -> Option<String> {
        self.inner.signer().map(|k| k.to_hex())
    }

    fn verify(&self) -> bool {
        self.inner.verify()
    }
}

#[pyclass(name = "Codecap", module = "codecaps", frozen)]
struct PyCodecap {
    inner: Codecap,
}

#[pymethods]
impl PyCodecap {
    #[new]
    fn new(heritage: PyRef<'_, PyHeritage>, key: PyRef<'_, PyKeyPair>) -> PyResult<Self> {
        Ok(PyCodecap {
            inner: Codecap::new(heritage.inner.clone(), key.inner.clone()).map_err(value_err)?,
        })
    }

    #[getter]
    fn heritage(&self) -> PyHeritage {
        PyHeritage {
            inner: self.inner.heritage().clone(),
        }
    }

    #[getter]
    fn public_key(&self) -> String {
        self.inner.public_key().to_hex()
    }

    #[getter]
    fn service_key(&self) -> Option<String> {
        self.inner.service_key().map(|k| k.to_hex())
    }

    fn delegate(&self, target: &str, rights: &str, p_length: i64) -> PyResult<PyHeritage> {
        Ok(PyHeritage {
            inner: cc::delegate(&self.inner, &pubkey(target)?, rights, p_length).map_err(value_err)?,
        })
    }

    /// Signs `attrs`, adding a nonce and timestamp when absent.
    #[pyo3(signature = (attrs, payload=None))]
    fn sign_request(&self, attrs: &Bound<'_, PyDict>, payload: Option<&[u8]>) -> PyResult<PyRequest> {
        Ok(PyRequest {
            inner: sign_call(&self.inner, attrs_from_dict(attrs)?, payload.unwrap_or_default()).map_err(value_err)?,
        })
    }
}

#[pyclass(name = "Decision", module = "codecaps", frozen, get_all)]
struct PyDecision {
    allowed: bool,
    /// `transport_binding`, `heritage`, `request_signature`, `version` or `rights(i)`.
    failing_stage: Option<String>,
    /// `(allowed, cause, steps_used)` per evaluated rights function.
    rights_outcomes: Vec<(bool, String, u64)>,
}

#[pymethods]
impl PyDecision {
    fn __bool__(&self) -> bool {
        self.allowed
    }

    fn __repr__(&self) -> String {
        format!("Decision(allowed={}, failing_stage={:?})", self.allowed, self.failing_stage)
    }
}

fn cause_name(c: Cause) -> &'static str {
    match c {
        Cause::Normal => "normal",
        Cause::ParseError => "parse_error",
        Cause::RuntimeError => "runtime_error",
        Cause::StepBudgetExceeded => "step_budget_exceeded",
    }
}

#[pyclass(name = "Response", module = "codecaps", frozen, get_all)]
struct PyResponse {
    status: u16,
    stage: Option<String>,
    error: Option<String>,
    realm: Option<String>,
    payload: Py<PyBytes>,
}

impl PyResponse {
    fn from_response(py: Python<'_>, r: Response) -> Self {
        PyResponse {
            status: r.status,
            stage: r.stage,
            error: r.error,
            realm: r.realm,
            payload: PyBytes::new(py, &r.payload).unbind(),
        }
    }
}

#[pymethods]
impl PyResponse {
    #[getter]
    fn ok(&self) -> bool {
        self.status == 200
    }

    fn __repr__(&self) -> String {
        format!("Response(status={}, stage={:?}, error={:?})", self.status, self.stage, self.error)
    }
}

#[pyclass(name = "ObjectService", module = "codecaps", frozen)]
struct PyObjectService {
    inner: Arc<ObjectService>,
    server: Server<ObjectService>,
}

#[pymethods]
impl PyObjectService {
    #[new]
    #[pyo3(signature = (key, realm=None, step_budget=None, store_dir=None))]
    fn new(key: PyRef<'_, PyKeyPair>, realm: Option<String>, step_budget: Option<u64>, store_dir: Option<PathBuf>) -> PyResult<Self> {
        let mut config = ServiceConfig::new(key.inner.clone());
        if let Some(r) = realm {
            config.realm = r;
        }
        config.step_budget = step_budget.unwrap_or(DEFAULT_STEP_BUDGET);
        config.store_dir = store_dir;
        let inner = Arc::new(ObjectService::open(config).map_err(value_err)?);
        Ok(PyObjectService {
            server: Server::new(inner.clone()),
            inner,
        })
    }

    #[getter]
    fn public_key(&self) -> String {
        self.inner.public_key().to_hex()
    }

    #[getter]
    fn realm(&self) -> String {
        self.inner.realm().to_string()
    }

    /// Creates an object without authorization and returns its id.
    #[pyo3(signature = (kind="plain", groups=Vec::new()))]
    fn create_object(&self, kind: &str, groups: Vec<String>) -> PyResult<String> {
        let kind = ObjectKind::parse(kind).ok_or_else(|| PyValueError::new_err(format!("unknown kind `{kind}`")))?;
        let groups: Vec<&str> = groups.iter().map(String::as_str).collect();
        self.inner.create_object(kind, &groups).map_err(value_err)
    }

    fn mint(&self, object_id: &str, subject: &str, rights: &str, p_length: i64) -> PyResult<PyHeritage> {
        Ok(PyHeritage {
            inner: self.inner.mint(object_id, &pubkey(subject)?, rights, p_length).map_err(value_err)?,
        })
    }

    fn mint_factory(&self, subject: &str, rights: &str, p_length: i64) -> PyResult<PyHeritage> {
        Ok(PyHeritage {
            inner: self.inner.mint_factory(&pubkey(subject)?, rights, p_length).map_err(value_err)?,
        })
    }

    /// Object state bytes, or `None` for an unknown id.
    fn state<'py>(&self, py: Python<'py>, object_id: &str) -> Option<Bound<'py, PyBytes>> {
        self.inner.object(object_id).map(|r| PyBytes::new(py, &r.state))
    }

    /// Signs and handles a request with `cap`, its key standing in for
    /// the authenticated transport.
    #[pyo3(signature = (cap, attrs, payload=None))]
    fn call(&self, py: Python<'_>, cap: PyRef<'_, PyCodecap>, attrs: &Bound<'_, PyDict>, payload: Option<&[u8]>) -> PyResult<PyResponse> {
        let payload = payload.unwrap_or_default();
        let r = sign_call(&cap.inner, attrs_from_dict(attrs)?, payload).map_err(value_err)?;
        let transport = cap.inner.public_key();
        let resp = self.inner.handle_request(cap.inner.heritage(), &r, Some(&transport), payload, unix_now());
        Ok(PyResponse::from_response(py, resp))
    }

    #[pyo3(signature = (heritage, request, payload=None, transport=None, now=None))]
    fn handle(
        &self,
        py: Python<'_>,
        heritage: PyRef<'_, PyHeritage>,
        request: PyRef<'_, PyRequest>,
        payload: Option<&[u8]>,
        transport: Option<&str>,
        now: Option<i64>,
    ) -> PyResult<PyResponse> {
        let transport = transport.map(pubkey).transpose()?;
        let resp = self.inner.handle_request(
            &heritage.inner,
            &request.inner,
            transport.as_ref(),
            payload.unwrap_or_default(),
            now.unwrap_or_else(unix_now),
        );
        Ok(PyResponse::from_response(py, resp))
    }

    /// Serves one wire frame as if it arrived from `transport`.
    #[pyo3(signature = (frame, transport=None))]
    fn serve_frame<'py>(&self, py: Python<'py>, frame: &[u8], transport: Option<&str>) -> PyResult<Bound<'py, PyBytes>> {
        let transport = transport.map(pubkey).transpose()?;
        Ok(PyBytes::new(py, &self.server.serve_frame(frame, transport.as_ref())))
    }

    #[pyo3(signature = (now=None))]
    fn gc_sweep(&self, now: Option<i64>) -> String {
        self.inner.gc_sweep(now.unwrap_or_else(unix_now)).to_string()
    }
}

#[pyfunction]
#[pyo3(signature = (service_key, subject, rights, p_length, object_id=None, version=None, service_name=None))]
fn mint_root(
    service_key: PyRef<'_, PyKeyPair>,
    subject: &str,
    rights: &str,
    p_length: i64,
    object_id: Option<&str>,
    version: Option<i64>,
    service_name: Option<&str>,
) -> PyResult<PyHeritage> {
    let h = cc::mint_root_named(&service_key.inner, service_name, &pubkey(subject)?, rights, p_length, object_id, version)
        .map_err(value_err)?;
    Ok(PyHeritage { inner: h })
}

#[pyfunction]
fn confine(rights: &str) -> PyResult<String> {
    cc::confine(rights).map_err(value_err)
}

#[pyfunction]
fn conjunction(rights: Vec<String>) -> String {
    cc::conjunction(rights.iter().map(String::as_str))
}

#[pyfunction]
fn amplify(heritage: PyRef<'_, PyHeritage>, holder: PyRef<'_, PyKeyPair>) -> PyResult<PyCodecap> {
    Ok(PyCodecap {
        inner: cc::amplify(&heritage.inner, &holder.inner).map_err(value_err)?,
    })
}

#[pyfunction]
#[pyo3(signature = (root, heritage, request, transport=None, now=None, step_budget=DEFAULT_STEP_BUDGET, allow_unauthenticated_transport=false))]
fn authorize(
    root: &str,
    heritage: PyRef<'_, PyHeritage>,
    request: PyRef<'_, PyRequest>,
    transport: Option<&str>,
    now: Option<i64>,
    step_budget: u64,
    allow_unauthenticated_transport: bool,
) -> PyResult<PyDecision> {
    let mut policy = AuthPolicy::new(pubkey(root)?, now.unwrap_or_else(unix_now), step_budget);
    policy.allow_unauthenticated_transport = allow_unauthenticated_transport;
    let transport = transport.map(pubkey).transpose()?;
    let d = cc::authorize(&policy, &heritage.inner, &request.inner, transport.as_ref(), None);
    Ok(PyDecision {
        allowed: d.allowed,
        failing_stage: d.failing_stage.map(|s| s.code()),
        rights_outcomes: d
            .rights_outcomes
            .iter()
            .map(|o| (o.allowed(), cause_name(o.cause).to_string(), o.steps_used))
            .collect(),
    })
}

#[pymodule]
#[pyo3(name = "codecaps")]
fn codecaps_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyKeyPair>()?;
    m.add_class::<PyHeritage>()?;
    m.add_class::<PyRequest>()?;
    m.add_class::<PyCodecap>()?;
    m.add_class::<PyDecision>()?;
    m.add_class::<PyResponse>()?;
    m.add_class::<PyObjectService>()?;
    m.add_function(wrap_pyfunction!(mint_root, m)?)?;
    m.add_function(wrap_pyfunction!(confine, m)?)?;
    m.add_function(wrap_pyfunction!(conjunction, m)?)?;
    m.add_function(wrap_pyfunction!(amplify, m)?)?;
    m.add_function(wrap_pyfunction!(authorize, m)?)?;
    m.add("DEFAULT_STEP_BUDGET", DEFAULT_STEP_BUDGET)?;
    Ok(())
}
