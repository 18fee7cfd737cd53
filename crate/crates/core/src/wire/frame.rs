//! Text frames. A request is
//!
//! ```text
//! CODECAP/1 CALL
//! Authentication: Codecaps -----BEGIN CODECAP CERT----- ... -----END CODECAP CERT-----
//! Session: new
//! Content-Length: 5
//!
//! -----BEGIN CODECAP REQUEST-----
//! ...
//! -----END CODECAP REQUEST-----
//!
//! hello
//! ```
//!
//! and a response is a status line, headers, a blank line and the payload.

use crate::certchain::{decode_request, encode_request, end_line, Heritage, RequestCert, REQUEST_LABEL};
use crate::objectsvc::Response;

use super::header::{encode_auth_value, parse_auth_value, AUTH_HEADER, AUTH_HEADER_ALT, SCHEME};
use super::{WireError, MAX_FRAME_BYTES};

pub const VERSION: &str = "CODECAP/1";
pub const CALL: &str = "CALL";

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SessionField {
    /// Ask the server to cache the heritage and issue a token.
    New,
    Token(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RequestFrame {
    pub auth: Option<Heritage>,
    pub session: Option<SessionField>,
    pub request: RequestCert,
    pub payload: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResponseFrame {
    pub status: u16,
    pub realm: Option<String>,
    /// `WWW-Authenticate` value, present on 401.
    pub challenge: Option<String>,
    pub session: Option<String>,
    pub stage: Option<String>,
    pub error: Option<String>,
    pub payload: Vec<u8>,
}

fn reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        400 => "Bad Request",
        401 => "Unauthorized",
        403 => "Forbidden",
        404 => "Not Found",
        409 => "Conflict",
        500 => "Internal Error",
        _ => "Status",
    }
}

fn frame_err(msg: impl Into<String>) -> WireError {
    WireError::Frame(msg.into())
}

/// Splits off the status line and header block. Returns the lines and the
/// bytes after the blank line.
fn split_head(bytes: &[u8]) -> Result<(Vec<&str>, &[u8]), WireError> {
    if bytes.len() > MAX_FRAME_BYTES {
        return Err(frame_err(format!("frame exceeds {MAX_FRAME_BYTES} bytes")));
    }
    let end = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| frame_err("missing blank line after headers"))?;
    let head = std::str::from_utf8(&bytes[..end]).map_err(|_| frame_err("headers are not UTF-8"))?;
    Ok((head.lines().map(|l| l.trim_end_matches('\r')).collect(), &bytes[end + 2..]))
}

fn header(line: &str) -> Result<(&str, &str), WireError> {
    let (name, value) = line
        .split_once(':')
        .ok_or_else(|| frame_err(format!("malformed header line `{line}`")))?;
    Ok((name.trim(), value.trim()))
}

fn content_length(value: &str) -> Result<usize, WireError> {
    value
        .parse::<usize>()
        .map_err(|_| frame_err(format!("bad Content-Length `{value}`")))
}

fn take_payload(rest: &[u8], length: Option<usize>) -> Result<Vec<u8>, WireError> {
    let length = length.unwrap_or(0);
    if rest.len() != length {
        return Err(frame_err(format!(
            "Content-Length is {length} but {} payload bytes follow",
            rest.len()
        )));
    }
    Ok(rest.to_vec())
}

impl RequestFrame {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("{VERSION} {CALL}\n");
        if let Some(h) = &self.auth {
            out.push_str(&format!("{AUTH_HEADER}: {}\n", encode_auth_value(h)));
        }
        match &self.session {
            Some(SessionField::New) => out.push_str("Session: new\n"),
            Some(SessionField::Token(t)) => out.push_str(&format!("Session: {t}\n")),
            None => {}
        }
        out.push_str(&format!("Content-Length: {}\n\n", self.payload.len()));
        out.push_str(&encode_request(&self.request));
        out.push('\n');
        let mut bytes = out.into_bytes();
        bytes.extend_from_slice(&self.payload);
        bytes
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, WireError> {
        let (lines, rest) = split_head(bytes)?;
        let (first, headers) = lines.split_first().ok_or_else(|| frame_err("empty frame"))?;
        if *first != format!("{VERSION} {CALL}") {
            return Err(frame_err(format!("unexpected request line `{first}`")));
        }
        let mut auth = None;
        let mut session = None;
        let mut length = None;
        for line in headers {
            let (name, value) = header(line)?;
            if name.eq_ignore_ascii_case(AUTH_HEADER) || name.eq_ignore_ascii_case(AUTH_HEADER_ALT) {
                auth = Some(parse_auth_value(value)?);
            } else if name.eq_ignore_ascii_case("Session") {
                session = Some(match value {
                    "new" => SessionField::New,
                    token => SessionField::Token(token.to_string()),
                });
            } else if name.eq_ignore_ascii_case("Content-Length") {
                length = Some(content_length(value)?);
            }
        }

        let footer = format!("{}\n\n", end_line(REQUEST_LABEL));
        let cut = rest
            .windows(footer.len())
            .position(|w| w == footer.as_bytes())
            .ok_or_else(|| frame_err("missing request certificate"))?;
        let armored = std::str::from_utf8(&rest[..cut + footer.len() - 1])
            .map_err(|_| frame_err("request block is not UTF-8"))?;
        let request = decode_request(armored).map_err(|e| frame_err(format!("request certificate: {e}")))?;
        let payload = take_payload(&rest[cut + footer.len()..], length)?;
        Ok(RequestFrame {
            auth,
            session,
            request,
            payload,
        })
    }
}

impl ResponseFrame {
    pub fn from_response(r: Response) -> Self {
        ResponseFrame {
            status: r.status,
            realm: r.realm,
            challenge: None,
            session: None,
            stage: r.stage,
            error: r.error,
            payload: r.payload,
        }
    }

    pub fn challenge(realm: &str, reason: &str) -> Self {
        ResponseFrame {
            status: 401,
            realm: Some(realm.to_string()),
            challenge: Some(format!("{SCHEME} realm={realm}")),
            session: None,
            stage: None,
            error: Some("unauthorized".into()),
            payload: reason.as_bytes().to_vec(),
        }
    }

    pub fn into_response(self) -> Response {
        Response {
            status: self.status,
            payload: self.payload,
            stage: self.stage,
            error: self.error,
            realm: self.realm,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("{VERSION} {} {}\n", self.status, reason(self.status));
        let mut put = |name: &str, value: &Option<String>| {
            if let Some(v) = value {
                out.push_str(&format!("{name}: {v}\n"));
            }
        };
        put("Realm", &self.realm);
        put("WWW-Authenticate", &self.challenge);
        put("Session", &self.session);
        put("Stage", &self.stage);
        put("Error", &self.error);
        out.push_str(&format!("Content-Length: {}\n\n", self.payload.len()));
        let mut bytes = out.into_bytes();
        bytes.extend_from_slice(&self.payload);
        bytes
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, WireError> {
        let (lines, rest) = split_head(bytes)?;
        let (first, headers) = lines.split_first().ok_or_else(|| frame_err("empty frame"))?;
        let status = first
            .strip_prefix(VERSION)
            .and_then(|s| s.split_whitespace().next())
            .and_then(|s| s.parse::<u16>().ok())
            .ok_or_else(|| frame_err(format!("unexpected status line `{first}`")))?;
        let mut frame = ResponseFrame {
            status,
            realm: None,
            challenge: None,
            session: None,
            stage: None,
            error: None,
            payload: Vec::new(),
        };
        let mut length = None;
        for line in headers {
            let (name, value) = header(line)?;
            let slot = match name.to_ascii_lowercase().as_str() {
                "realm" => &mut frame.realm,
                "www-authenticate" => &mut frame.challenge,
                "session" => &mut frame.session,
                "stage" => &mut frame.stage,
                "error" => &mut frame.error,
                "content-length" => {
                    length = Some(content_length(value)?);
                    continue;
                }
                _ => continue,
            };
            *slot = Some(value.to_string());
        }
        frame.payload = take_payload(rest, length)?;
        Ok(frame)
    }
}

/// Realm named by a `WWW-Authenticate: Codecaps realm=<sub>` value.
pub fn challenge_realm(value: &str) -> Option<&str> {
    value.strip_prefix(SCHEME)?.trim().strip_prefix("realm=")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attrs;
    use crate::certchain::{CertBuilder, KeyPair};

    fn sample() -> RequestFrame {
        let root = KeyPair::from_seed(&[1; 32]).unwrap();
        let holder = KeyPair::from_seed(&[2; 32]).unwrap();
        let cert = CertBuilder::new(&holder.public_key(), &root.public_key(), "1", 1)
            .sign(&root)
            .unwrap();
        let request = RequestCert::sign(attrs! { "type" => "WRITE", "nonce" => "ab", "timestamp" => 5i64 }, &holder).unwrap();
        RequestFrame {
            auth: Some(Heritage::single(cert)),
            session: Some(SessionField::New),
            request,
            payload: b"\n\nbinary\0payload\n\n".to_vec(),
        }
    }

    #[test]
    fn request_round_trip() {
        let f = sample();
        let bytes = f.to_bytes();
        assert!(bytes.starts_with(b"CODECAP/1 CALL\nAuthentication: Codecaps -----BEGIN"));
        assert_eq!(RequestFrame::parse(&bytes).unwrap(), f);

        let bare = RequestFrame {
            auth: None,
            session: Some(SessionField::Token("00ff".into())),
            payload: Vec::new(),
            ..f
        };
        assert_eq!(RequestFrame::parse(&bare.to_bytes()).unwrap(), bare);
    }

    #[test]
    fn request_length_mismatch() {
        let mut bytes = sample().to_bytes();
        bytes.push(b'x');
        assert!(RequestFrame::parse(&bytes).unwrap_err().to_string().contains("Content-Length"));
        assert!(RequestFrame::parse(b"GET / HTTP/1.1\n\n").is_err());
        assert!(RequestFrame::parse(b"CODECAP/1 CALL\n\n").is_err());
    }

    #[test]
    fn response_round_trip() {
        let c = ResponseFrame::challenge("svc-subject", "no credentials");
        let bytes = c.to_bytes();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("CODECAP/1 401 Unauthorized\nRealm: svc-subject\nWWW-Authenticate: Codecaps realm=svc-subject\n"));
        let back = ResponseFrame::parse(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(challenge_realm(back.challenge.as_deref().unwrap()), Some("svc-subject"));

        let ok = ResponseFrame {
            session: Some("abcd".into()),
            stage: Some("rights(2)".into()),
            ..ResponseFrame::from_response(Response::ok(b"\n\nx".to_vec()))
        };
        assert_eq!(ResponseFrame::parse(&ok.to_bytes()).unwrap(), ok);
    }
}
