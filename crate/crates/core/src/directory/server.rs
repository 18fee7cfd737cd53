use std::collections::BTreeMap;

use crate::certchain::{
    decode_heritage, encode_heritage, validate_heritage_at, CertBuilder, KeyPair, RequestCert,
};
use crate::objectsvc::ServiceError;
use crate::rights::RightsProgram;

use super::table::{valid_group, DirectoryTable, Row};

pub const LOOKUP: &str = "LOOKUP";
pub const CHMOD: &str = "CHMOD";
pub const INSERT: &str = "INSERT";
pub const REMOVE: &str = "REMOVE";
pub const LIST: &str = "LIST";

/// Prefix of the per-group rights attributes of an INSERT request.
pub const RIGHTS_PREFIX: &str = "rights.";

pub fn is_verb(ty: &str) -> bool {
    matches!(ty, LOOKUP | CHMOD | INSERT | REMOVE | LIST)
}

pub(crate) struct VerbOutcome {
    pub payload: Vec<u8>,
    pub changed: bool,
}

fn bad(msg: impl Into<String>) -> ServiceError {
    ServiceError::BadRequest(msg.into())
}

fn attr<'a>(r: &'a RequestCert, name: &str) -> Result<&'a str, ServiceError> {
    r.str_attr(name)
        .ok_or_else(|| bad(format!("missing string attribute `{name}`")))
}

fn parse_rights(src: &str) -> Result<(), ServiceError> {
    RightsProgram::parse(src)
        .map(|_| ())
        .map_err(|e| bad(format!("invalid rights function: {e}")))
}

/// Runs one directory request against an already authorized table.
pub(crate) fn execute_verb(
    verb: &str,
    table: &mut DirectoryTable,
    r: &RequestCert,
    service_key: &KeyPair,
    now: i64,
) -> Result<VerbOutcome, ServiceError> {
    let unchanged = |payload: Vec<u8>| VerbOutcome { payload, changed: false };
    let changed = VerbOutcome { payload: Vec::new(), changed: true };
    match verb {
        LOOKUP => {
            let name = attr(r, "name")?;
            let group = attr(r, "group")?;
            let row = table
                .row(name)
                .ok_or_else(|| ServiceError::NoSuchName(name.to_string()))?;
            let rights = row
                .group_rights
                .get(group)
                .filter(|_| table.has_group(group))
                .ok_or_else(|| ServiceError::NoSuchGroup(group.to_string()))?;
            let tail = row.cap.last().p_length().unwrap_or(0);
            if tail <= 0 {
                return Err(ServiceError::DepthExhausted);
            }
            let requester = r.signer().ok_or_else(|| bad("missing signer"))?;
            let cert = CertBuilder::new(&requester, &service_key.public_key(), rights, tail - 1)
                .sign(service_key)
                .map_err(|e| bad(e.to_string()))?;
            Ok(unchanged(encode_heritage(&row.cap.extended(cert)).into_bytes()))
        }
        CHMOD => {
            let name = attr(r, "row")?;
            let group = attr(r, "group")?;
            let src = attr(r, "value")?;
            parse_rights(src)?;
            if !table.has_group(group) {
                return Err(ServiceError::NoSuchGroup(group.to_string()));
            }
            let row = table
                .row_mut(name)
                .ok_or_else(|| ServiceError::NoSuchName(name.to_string()))?;
            row.group_rights.insert(group.to_string(), src.to_string());
            Ok(changed)
        }
        INSERT => {
            let name = attr(r, "name")?;
            let cap = decode_heritage(attr(r, "cap")?).map_err(|e| bad(e.to_string()))?;
            if cap.tail_key() != Some(service_key.public_key()) {
                return Err(ServiceError::ForeignCap);
            }
            let root = cap.root_key().ok_or_else(|| bad("cap has no root"))?;
            validate_heritage_at(&root, &cap, now).map_err(|e| bad(e.to_string()))?;
            let mut group_rights = BTreeMap::new();
            for (key, value) in r.attrs() {
                let Some(group) = key.strip_prefix(RIGHTS_PREFIX) else {
                    continue;
                };
                if !valid_group(group) {
                    return Err(bad(format!("bad group name `{group}`")));
                }
                let src = value
                    .as_str()
                    .ok_or_else(|| bad(format!("`{key}` must be a string")))?;
                parse_rights(src)?;
                group_rights.insert(group.to_string(), src.to_string());
            }
            table
                .insert(name, Row { cap, group_rights })
                .map_err(|e| bad(e.to_string()))?;
            Ok(changed)
        }
        REMOVE => {
            let name = attr(r, "name")?;
            table
                .remove(name)
                .ok_or_else(|| ServiceError::NoSuchName(name.to_string()))?;
            Ok(changed)
        }
        LIST => {
            let mut out = String::new();
            for (name, groups) in table.listing() {
                out.push_str(&name);
                out.push('\t');
                out.push_str(&groups.join(","));
                out.push('\n');
            }
            Ok(unchanged(out.into_bytes()))
        }
        other => Err(ServiceError::Unsupported(other.to_string())),
    }
}

/// Inverse of the LIST payload.
pub fn parse_listing(text: &str) -> Vec<(String, Vec<String>)> {
    text.lines()
        .filter(|l| !l.is_empty())
        .map(|line| {
            let (name, groups) = line.split_once('\t').unwrap_or((line, ""));
            let groups = groups
                .split(',')
                .filter(|g| !g.is_empty())
                .map(str::to_string)
                .collect();
            (name.to_string(), groups)
        })
        .collect()
}
