//! Text armor for certificates, heritages and request certificates.
//!
//! Each block is a header line, the base64 of the signed encoding in
//! 64-character lines, and a footer line. A heritage file is the
//! concatenation of its certificate blocks, `C_1` first.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use thiserror::Error;

use super::cert::{CertError, Certificate, Heritage, RequestCert};

pub const CERT_LABEL: &str = "CODECAP CERT";
pub const REQUEST_LABEL: &str = "CODECAP REQUEST";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ArmorError {
    /// 1-based index of the offending block.
    #[error("block {block}: {reason}")]
    Block { block: usize, reason: String },
    #[error("no armored blocks found")]
    Empty,
}

fn block_err(block: usize, reason: impl Into<String>) -> ArmorError {
    ArmorError::Block {
        block,
        reason: reason.into(),
    }
}

pub fn begin_line(label: &str) -> String {
    format!("-----BEGIN {label}-----")
}

pub fn end_line(label: &str) -> String {
    format!("-----END {label}-----")
}

/// Armors one block, terminated by a newline.
pub fn armor(label: &str, bytes: &[u8]) -> String {
    let b64 = STANDARD.encode(bytes);
    let mut out = begin_line(label);
    out.push('\n');
    for chunk in b64.as_bytes().chunks(64) {
        out.push_str(std::str::from_utf8(chunk).expect("base64 is ascii"));
        out.push('\n');
    }
    out.push_str(&end_line(label));
    out.push('\n');
    out
}

/// Splits `text` into the decoded payloads of its `label` blocks.
pub fn dearmor(label: &str, text: &str) -> Result<Vec<Vec<u8>>, ArmorError> {
    let begin = begin_line(label);
    let end = end_line(label);
    let mut blocks = Vec::new();
    let mut current: Option<String> = None;
    for line in text.lines().map(|l| l.trim_end_matches('\r')) {
        let block = blocks.len() + 1;
        if line == begin {
            if current.is_some() {
                return Err(block_err(block, "header inside an open block"));
            }
            current = Some(String::new());
        } else if line == end {
            let body = current
                .take()
                .ok_or_else(|| block_err(block, "footer before header"))?;
            let bytes = STANDARD
                .decode(body.as_bytes())
                .map_err(|e| block_err(block, format!("bad base64: {e}")))?;
            blocks.push(bytes);
        } else if let Some(body) = current.as_mut() {
            if line.len() > 64 || line.is_empty() {
                return Err(block_err(block, "bad armor line"));
            }
            body.push_str(line);
        } else if !line.trim().is_empty() {
            return Err(block_err(block, "text outside an armored block"));
        }
    }
    if current.is_some() {
        return Err(block_err(blocks.len() + 1, "truncated block (missing footer)"));
    }
    if blocks.is_empty() {
        return Err(ArmorError::Empty);
    }
    Ok(blocks)
}

pub fn encode_certificate(cert: &Certificate) -> String {
    armor(CERT_LABEL, &cert.to_bytes())
}

pub fn encode_heritage(h: &Heritage) -> String {
    h.certs().iter().map(encode_certificate).collect()
}

pub fn decode_heritage(text: &str) -> Result<Heritage, ArmorError> {
    let certs = dearmor(CERT_LABEL, text)?
        .iter()
        .enumerate()
        .map(|(i, bytes)| {
            Certificate::from_bytes(bytes).map_err(|e: CertError| block_err(i + 1, e.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Heritage::new(certs).expect("dearmor never returns zero blocks"))
}

pub fn encode_request(r: &RequestCert) -> String {
    armor(REQUEST_LABEL, &r.to_bytes())
}

pub fn decode_request(text: &str) -> Result<RequestCert, ArmorError> {
    let blocks = dearmor(REQUEST_LABEL, text)?;
    if blocks.len() != 1 {
        return Err(block_err(2, "expected exactly one request block"));
    }
    RequestCert::from_bytes(&blocks[0]).map_err(|e| block_err(1, e.to_string()))
}
