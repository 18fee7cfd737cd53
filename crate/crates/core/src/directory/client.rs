use thiserror::Error;

use crate::attrs;
use crate::certchain::{decode_heritage, encode_heritage, AttrValue, Heritage};
use crate::codecap::{CapError, Codecap};
use crate::objectsvc::{CallError, Connector, Response};

use super::server::{parse_listing, CHMOD, INSERT, LIST, LOOKUP, REMOVE, RIGHTS_PREFIX};
use super::ATTR_OBJECT_KIND;

#[derive(Debug, Error)]
pub enum DirError {
    #[error(transparent)]
    Call(#[from] CallError),
    #[error(transparent)]
    Cap(#[from] CapError),
    /// The directory service answered with an error status.
    #[error("{message}")]
    Refused {
        status: u16,
        error: Option<String>,
        stage: Option<String>,
        message: String,
    },
    #[error("bad reply: {0}")]
    BadReply(String),
    #[error("not a directory")]
    NotADirectory,
    #[error("empty path")]
    EmptyPath,
    /// A path component failed; `index` is 1-based.
    #[error("component {index} (`{name}`): {source}")]
    Component {
        index: usize,
        name: String,
        source: Box<DirError>,
    },
}

impl DirError {
    /// Error code of the underlying refusal, if any.
    pub fn error_code(&self) -> Option<&str> {
        match self {
            DirError::Refused { error, .. } => error.as_deref(),
            DirError::Component { source, .. } => source.error_code(),
            _ => None,
        }
    }
}

fn expect_ok(resp: Response) -> Result<Vec<u8>, DirError> {
    if resp.is_ok() {
        return Ok(resp.payload);
    }
    Err(DirError::Refused {
        status: resp.status,
        message: resp.text(),
        error: resp.error,
        stage: resp.stage,
    })
}

/// True when the heritage's first certificate marks a directory object.
pub fn is_directory(h: &Heritage) -> bool {
    h.first().str_attr(ATTR_OBJECT_KIND) == Some("directory")
}

/// Home and working directory of one client.
#[derive(Clone, Debug)]
pub struct ClientDirState {
    pub home: Codecap,
    pub working: Codecap,
}

impl ClientDirState {
    /// Initially the working directory is the home directory.
    pub fn new(home: Codecap) -> Self {
        ClientDirState {
            working: home.clone(),
            home,
        }
    }
}

/// Client side of the directory verbs.
pub struct DirClient<'a> {
    connector: &'a dyn Connector,
}

impl<'a> DirClient<'a> {
    pub fn new(connector: &'a dyn Connector) -> Self {
        DirClient { connector }
    }

    /// Looks `name` up in `group`; the result is delegated to `dc`'s key.
    pub fn lookup(&self, dc: &Codecap, name: &str, group: &str) -> Result<Heritage, DirError> {
        let req = attrs! { "type" => LOOKUP, "name" => name, "group" => group };
        let body = expect_ok(self.connector.call(dc, req, &[])?)?;
        let text = String::from_utf8(body).map_err(|e| DirError::BadReply(e.to_string()))?;
        decode_heritage(&text).map_err(|e| DirError::BadReply(e.to_string()))
    }

    /// [`lookup`](Self::lookup) paired with the caller's key.
    pub fn lookup_cap(&self, dc: &Codecap, name: &str, group: &str) -> Result<Codecap, DirError> {
        let h = self.lookup(dc, name, group)?;
        Ok(Codecap::new(h, dc.key().clone())?)
    }

    pub fn chmod(&self, dc: &Codecap, row: &str, group: &str, rights: &str) -> Result<(), DirError> {
        let req = attrs! { "type" => CHMOD, "row" => row, "group" => group, "value" => rights };
        expect_ok(self.connector.call(dc, req, &[])?)?;
        Ok(())
    }

    pub fn insert(
        &self,
        dc: &Codecap,
        name: &str,
        cap: &Heritage,
        group_rights: &[(&str, &str)],
    ) -> Result<(), DirError> {
        let mut req = attrs! { "type" => INSERT, "name" => name, "cap" => encode_heritage(cap) };
        for (group, src) in group_rights {
            req.insert(format!("{RIGHTS_PREFIX}{group}"), AttrValue::Str(src.to_string()));
        }
        expect_ok(self.connector.call(dc, req, &[])?)?;
        Ok(())
    }

    pub fn remove(&self, dc: &Codecap, name: &str) -> Result<(), DirError> {
        let req = attrs! { "type" => REMOVE, "name" => name };
        expect_ok(self.connector.call(dc, req, &[])?)?;
        Ok(())
    }

    /// Row names with the groups each row has rights for.
    pub fn list(&self, dc: &Codecap) -> Result<Vec<(String, Vec<String>)>, DirError> {
        let body = expect_ok(self.connector.call(dc, attrs! { "type" => LIST }, &[])?)?;
        Ok(parse_listing(&String::from_utf8_lossy(&body)))
    }

    /// Resolves `/a/b` from home or `a/b` from the working directory,
    /// looking every component up in `group`.
    pub fn resolve_path(
        &self,
        st: &ClientDirState,
        path: &str,
        group: &str,
    ) -> Result<Heritage, DirError> {
        if path.is_empty() {
            return Err(DirError::EmptyPath);
        }
        let start = if path.starts_with('/') { &st.home } else { &st.working };
        let components: Vec<&str> = path.split('/').filter(|c| !c.is_empty()).collect();
        let mut current = start.clone();
        let mut result = start.heritage().clone();
        for (i, name) in components.iter().enumerate() {
            let wrap = |e: DirError| DirError::Component {
                index: i + 1,
                name: name.to_string(),
                source: Box::new(e),
            };
            if !is_directory(current.heritage()) {
                return Err(wrap(DirError::NotADirectory));
            }
            result = self.lookup(&current, name, group).map_err(wrap)?;
            current = Codecap::new(result.clone(), st.working.key().clone())
                .map_err(|e| wrap(e.into()))?;
        }
        Ok(result)
    }

    /// Moves the working directory; home is unchanged.
    pub fn chdir(
        &self,
        st: &ClientDirState,
        path: &str,
        group: &str,
    ) -> Result<ClientDirState, DirError> {
        let h = self.resolve_path(st, path, group)?;
        if !is_directory(&h) {
            return Err(DirError::NotADirectory);
        }
        Ok(ClientDirState {
            home: st.home.clone(),
            working: Codecap::new(h, st.working.key().clone())?,
        })
    }
}
