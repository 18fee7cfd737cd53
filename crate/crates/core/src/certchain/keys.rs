use std::fmt;

use ed25519_dalek::{Signature, Signer, SigningKey, VerifyingKey};
use rand::rngs::OsRng;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KeyError {
    #[error("seed must be exactly 32 bytes, got {0}")]
    BadSeedLength(usize),
    #[error("invalid hex key: {0}")]
    BadHex(String),
    #[error("malformed key file: {0}")]
    BadKeyFile(String),
}

/// A 32-byte Ed25519 public key identifying a principal.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PublicKey([u8; 32]);

impl PublicKey {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        PublicKey(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// Parses exactly 64 hex characters.
    pub fn from_hex(s: &str) -> Result<Self, KeyError> {
        let s = s.trim();
        if s.len() != 64 {
            return Err(KeyError::BadHex(format!(
                "expected 64 hex characters, got {}",
                s.len()
            )));
        }
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).map_err(|e| KeyError::BadHex(e.to_string()))?;
        Ok(PublicKey(out))
    }

    /// Strict Ed25519 verification. Malformed keys or signatures verify as false.
    pub fn verify(&self, message: &[u8], signature: &[u8]) -> bool {
        let Ok(key) = VerifyingKey::from_bytes(&self.0) else {
            return false;
        };
        let Ok(sig) = Signature::from_slice(signature) else {
            return false;
        };
        key.verify_strict(message, &sig).is_ok()
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", self.to_hex())
    }
}

impl fmt::Display for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// A principal's signing key pair. The private half is never written into
/// certificates, heritages or wire messages.
#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
}

impl KeyPair {
    pub fn generate() -> Self {
        KeyPair {
            signing: SigningKey::generate(&mut OsRng),
        }
    }

    /// Deterministic key derivation from a 32-byte seed.
    pub fn from_seed(seed: &[u8]) -> Result<Self, KeyError> {
        let seed: [u8; 32] = seed
            .try_into()
            .map_err(|_| KeyError::BadSeedLength(seed.len()))?;
        Ok(KeyPair {
            signing: SigningKey::from_bytes(&seed),
        })
    }

    /// `generate_keypair`: seeded when a seed is given, random otherwise.
    pub fn generate_with(seed: Option<&[u8]>) -> Result<Self, KeyError> {
        match seed {
            Some(seed) => Self::from_seed(seed),
            None => Ok(Self::generate()),
        }
    }

    pub fn public_key(&self) -> PublicKey {
        PublicKey(self.signing.verifying_key().to_bytes())
    }

    pub fn sign(&self, message: &[u8]) -> Vec<u8> {
        self.signing.sign(message).to_bytes().to_vec()
    }

    /// Key file text: private key hex, then public key hex, one per line.
    pub fn to_key_file(&self) -> String {
        format!(
            "{}\n{}\n",
            hex::encode(self.signing.to_bytes()),
            self.public_key().to_hex()
        )
    }

    pub fn from_key_file(text: &str) -> Result<Self, KeyError> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let private = lines
            .next()
            .ok_or_else(|| KeyError::BadKeyFile("missing private key line".into()))?;
        let public = lines
            .next()
            .ok_or_else(|| KeyError::BadKeyFile("missing public key line".into()))?;
        if lines.next().is_some() {
            return Err(KeyError::BadKeyFile("trailing content".into()));
        }
        let seed = PublicKey::from_hex(private)
            .map_err(|_| KeyError::BadKeyFile("private key is not 64 hex characters".into()))?;
        let pair = Self::from_seed(seed.as_bytes())?;
        let expected = PublicKey::from_hex(public)
            .map_err(|_| KeyError::BadKeyFile("public key is not 64 hex characters".into()))?;
        if pair.public_key() != expected {
            return Err(KeyError::BadKeyFile(
                "public key does not match private key".into(),
            ));
        }
        Ok(pair)
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("public_key", &self.public_key())
            .finish_non_exhaustive()
    }
}
