use crate::certchain::{decode_heritage, encode_heritage, Heritage};

use super::{WireError, MAX_WIRE_CERTS};

pub const SCHEME: &str = "Codecaps";
pub const AUTH_HEADER: &str = "Authentication";
/// Accepted on parse for interoperability with ordinary HTTP stacks.
pub const AUTH_HEADER_ALT: &str = "Authorization";

/// Armored text with its line breaks turned into single spaces.
pub fn fold(armored: &str) -> String {
    armored.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Rebuilds armored lines from a folded token stream. Marker lines
/// (`-----BEGIN CODECAP CERT-----`) span several tokens.
pub fn unfold(folded: &str) -> Result<String, WireError> {
    let mut lines = Vec::new();
    let mut tokens = folded.split_whitespace();
    while let Some(tok) = tokens.next() {
        if let Some(rest) = tok.strip_prefix("-----") {
            let mut marker = tok.to_string();
            let mut closed = !rest.is_empty() && tok.ends_with("-----") && tok.len() > 10;
            while !closed {
                let next = tokens
                    .next()
                    .ok_or_else(|| WireError::Header("unterminated armor marker".into()))?;
                marker.push(' ');
                marker.push_str(next);
                closed = next.ends_with("-----");
            }
            lines.push(marker);
        } else {
            lines.push(tok.to_string());
        }
    }
    let mut text = lines.join("\n");
    text.push('\n');
    Ok(text)
}

/// `Codecaps <folded heritage>`, the value of the header.
pub fn encode_auth_value(h: &Heritage) -> String {
    format!("{SCHEME} {}", fold(&encode_heritage(h)))
}

/// The full header line.
pub fn encode_auth_header(h: &Heritage) -> String {
    format!("{AUTH_HEADER}: {}", encode_auth_value(h))
}

pub fn parse_auth_value(value: &str) -> Result<Heritage, WireError> {
    let value = value.trim();
    let (scheme, rest) = value.split_once(char::is_whitespace).unwrap_or((value, ""));
    if scheme != SCHEME {
        return Err(WireError::Header(format!("unsupported scheme `{scheme}`")));
    }
    let h = decode_heritage(&unfold(rest)?).map_err(|e| WireError::Header(e.to_string()))?;
    if h.len() > MAX_WIRE_CERTS {
        return Err(WireError::Header(format!(
            "heritage of {} certificates exceeds the wire limit of {MAX_WIRE_CERTS}",
            h.len()
        )));
    }
    Ok(h)
}

/// Parses `Authentication: Codecaps ...` (or `Authorization:`).
pub fn parse_auth_header(line: &str) -> Result<Heritage, WireError> {
    let (name, value) = line
        .split_once(':')
        .ok_or_else(|| WireError::Header("missing `:`".into()))?;
    let name = name.trim();
    if !name.eq_ignore_ascii_case(AUTH_HEADER) && !name.eq_ignore_ascii_case(AUTH_HEADER_ALT) {
        return Err(WireError::Header(format!("unexpected header `{name}`")));
    }
    parse_auth_value(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certchain::{CertBuilder, KeyPair};

    fn chain(n: usize) -> Heritage {
        let keys: Vec<KeyPair> = (0..=n).map(|i| KeyPair::from_seed(&[i as u8; 32]).unwrap()).collect();
        let mut certs = Vec::new();
        for i in 0..n {
            let cert = CertBuilder::new(
                &keys[i + 1].public_key(),
                &keys[i].public_key(),
                "request.type == \"READ\"",
                (n - i) as i64,
            )
            .sign(&keys[i])
            .unwrap();
            certs.push(cert);
        }
        Heritage::new(certs).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for n in 1..=8 {
            let h = chain(n);
            let line = encode_auth_header(&h);
            assert!(line.starts_with("Authentication: Codecaps -----BEGIN CODECAP CERT-----"));
            assert!(!line.contains('\n'));
            let back = parse_auth_header(&line).unwrap();
            assert_eq!(back, h);
            for (a, b) in back.certs().iter().zip(h.certs()) {
                assert_eq!(a.to_bytes(), b.to_bytes());
            }
        }
    }

    #[test]
    fn authorization_spelling_is_accepted() {
        let h = chain(2);
        let line = format!("Authorization: {}", encode_auth_value(&h));
        assert_eq!(parse_auth_header(&line).unwrap(), h);
    }

    #[test]
    fn wrong_scheme_is_rejected() {
        let line = encode_auth_header(&chain(1)).replace("Codecaps", "Bearer");
        assert!(matches!(parse_auth_header(&line), Err(WireError::Header(m)) if m.contains("Bearer")));
    }

    #[test]
    fn truncation_names_the_block() {
        let line = encode_auth_header(&chain(3));
        let cut = &line[..line.len() * 3 / 4];
        let err = parse_auth_header(cut).unwrap_err().to_string();
        assert!(err.contains("block 3"), "{err}");
    }

    #[test]
    fn overlong_chains_are_refused() {
        let line = encode_auth_header(&chain(17));
        assert!(parse_auth_header(&line).is_err());
        assert!(parse_auth_header(&encode_auth_header(&chain(16))).is_ok());
    }
}
