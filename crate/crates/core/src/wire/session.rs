use std::collections::HashMap;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::RngCore;

use crate::certchain::{Heritage, PublicKey};

pub const DEFAULT_SESSION_TTL: Duration = Duration::from_secs(15 * 60);

struct Entry {
    heritage: Heritage,
    transport: Option<PublicKey>,
    expires: Instant,
}

/// Server-side cache of heritages keyed by random 128-bit tokens. A token
/// only resolves for the transport identity it was issued to.
pub struct SessionCache {
    ttl: Duration,
    entries: Mutex<HashMap<String, Entry>>,
}

impl Default for SessionCache {
    fn default() -> Self {
        Self::new(DEFAULT_SESSION_TTL)
    }
}

impl SessionCache {
    pub fn new(ttl: Duration) -> Self {
        SessionCache {
            ttl,
            entries: Mutex::new(HashMap::new()),
        }
    }

    pub fn issue(&self, heritage: Heritage, transport: Option<PublicKey>) -> String {
        let mut raw = [0u8; 16];
        rand::thread_rng().fill_bytes(&mut raw);
        let token = hex::encode(raw);
        let now = Instant::now();
        let mut entries = self.entries.lock().unwrap_or_else(|p| p.into_inner());
        entries.retain(|_, e| e.expires > now);
        entries.insert(
            token.clone(),
            Entry {
                heritage,
                transport,
                expires: now + self.ttl,
            },
        );
        token
    }

    pub fn lookup(&self, token: &str, transport: Option<&PublicKey>) -> Option<Heritage> {
        let now = Instant::now();
        let mut entries = self.entries.lock().unwrap_or_else(|p| p.into_inner());
        let entry = entries.get(token)?;
        if entry.expires <= now {
            entries.remove(token);
            return None;
        }
        (entry.transport.as_ref() == transport).then(|| entry.heritage.clone())
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap_or_else(|p| p.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certchain::{CertBuilder, KeyPair};

    fn h() -> Heritage {
        let k = KeyPair::from_seed(&[3; 32]).unwrap();
        Heritage::single(CertBuilder::new(&k.public_key(), &k.public_key(), "1", 0).sign(&k).unwrap())
    }

    #[test]
    fn tokens_are_bound_to_transport() {
        let cache = SessionCache::default();
        let me = KeyPair::from_seed(&[4; 32]).unwrap().public_key();
        let other = KeyPair::from_seed(&[5; 32]).unwrap().public_key();
        let t = cache.issue(h(), Some(me));
        assert_eq!(t.len(), 32);
        assert_eq!(cache.lookup(&t, Some(&me)), Some(h()));
        assert_eq!(cache.lookup(&t, Some(&other)), None);
        assert_eq!(cache.lookup(&t, None), None);
        assert_eq!(cache.lookup("nope", Some(&me)), None);
        assert_ne!(cache.issue(h(), Some(me)), t);
    }

    #[test]
    fn tokens_expire() {
        let cache = SessionCache::new(Duration::from_millis(20));
        let t = cache.issue(h(), None);
        assert!(cache.lookup(&t, None).is_some());
        std::thread::sleep(Duration::from_millis(40));
        assert!(cache.lookup(&t, None).is_none());
        assert!(cache.is_empty());
    }
}
