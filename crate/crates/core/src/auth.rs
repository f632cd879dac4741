//! Basic authentication, checked once per QUIC connection.
//!
//! The broker verifies an `Authorization: Basic ...` header the first time a
//! connection presents one. After that the connection itself is trusted and
//! later requests on it may omit the header. Early data is never enabled by
//! the endpoints, so a cached connection cannot be replayed.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum AuthError {
    #[error("malformed authorization header: {0}")]
    MalformedHeader(&'static str),
    #[error("credentials file line {line}: {reason}")]
    BadCredentialLine { line: usize, reason: String },
    #[error("invalid credential field: {0}")]
    InvalidField(&'static str),
    #[error("reading credentials: {0}")]
    Io(String),
}

fn valid_field(s: &str) -> bool {
    !s.contains(':') && !s.chars().any(char::is_control)
}

/// Username to password map, read-only once loaded.
#[derive(Debug, Default)]
pub struct CredentialStore {
    entries: HashMap<String, String>,
    verifications: AtomicU64,
    failures: AtomicU64,
}

impl CredentialStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, user: &str, pass: &str) -> Result<(), AuthError> {
        if !valid_field(user) {
            return Err(AuthError::InvalidField("user"));
        }
        if !valid_field(pass) {
            return Err(AuthError::InvalidField("password"));
        }
        self.entries.insert(user.to_owned(), pass.to_owned());
        Ok(())
    }

    /// Parses `user:password` lines. Blank lines and lines starting with `#`
    /// are ignored; a repeated username is an error.
    pub fn parse(text: &str) -> Result<Self, AuthError> {
        let mut store = Self::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: &str| AuthError::BadCredentialLine {
                line: idx + 1,
                reason: reason.to_owned(),
            };
            let (user, pass) = line.split_once(':').ok_or_else(|| bad("missing ':'"))?;
            if user.is_empty() {
                return Err(bad("empty username"));
            }
            if store.entries.contains_key(user) {
                return Err(bad("duplicate username"));
            }
            store
                .insert(user, pass)
                .map_err(|e| bad(&e.to_string()))?;
        }
        Ok(store)
    }

    pub fn load(path: &Path) -> Result<Self, AuthError> {
        let text = std::fs::read_to_string(path).map_err(|e| AuthError::Io(e.to_string()))?;
        Self::parse(&text)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// True iff the exact pair is present. Both fields are always compared in
    /// full so the work done does not depend on which one mismatched.
    pub fn check_credentials(&self, user: &str, pass: &str) -> bool {
        self.verifications.fetch_add(1, Ordering::Relaxed);
        let (stored_user, stored_pass, known) = match self.entries.get_key_value(user) {
            Some((u, p)) => (u.as_str(), p.as_str(), true),
            None => ("\u{0}", "\u{0}", false),
        };
        let user_ok = ct_eq(stored_user.as_bytes(), user.as_bytes());
        let pass_ok = ct_eq(stored_pass.as_bytes(), pass.as_bytes());
        let ok = known & user_ok & pass_ok;
        if !ok {
            self.failures.fetch_add(1, Ordering::Relaxed);
        }
        ok
    }

    /// Number of `check_credentials` calls so far.
    pub fn verifications(&self) -> u64 {
        self.verifications.load(Ordering::Relaxed)
    }

    pub fn failures(&self) -> u64 {
        self.failures.load(Ordering::Relaxed)
    }
}

fn ct_eq(a: &[u8], b: &[u8]) -> bool {
    let len = a.len().max(b.len());
    let mut diff = (a.len() ^ b.len()) as u64;
    for i in 0..len {
        let x = a.get(i).copied().unwrap_or(0);
        let y = b.get(i).copied().unwrap_or(0);
        diff |= u64::from(x ^ y);
    }
    diff == 0
}

pub fn encode_basic_header(user: &str, pass: &str) -> String {
    format!("Basic {}", STANDARD.encode(format!("{user}:{pass}")))
}

pub fn decode_basic_header(header: &str) -> Result<(String, String), AuthError> {
    let (scheme, payload) = header
        .trim()
        .split_once(' ')
        .ok_or(AuthError::MalformedHeader("missing scheme"))?;
    if !scheme.eq_ignore_ascii_case("basic") {
        return Err(AuthError::MalformedHeader("scheme is not Basic"));
    }
    let raw = STANDARD
        .decode(payload.trim())
        .map_err(|_| AuthError::MalformedHeader("bad base64"))?;
    let text = String::from_utf8(raw).map_err(|_| AuthError::MalformedHeader("not utf-8"))?;
    let (user, pass) = text
        .split_once(':')
        .ok_or(AuthError::MalformedHeader("missing ':'"))?;
    Ok((user.to_owned(), pass.to_owned()))
}

/// Opaque identity of a transport connection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConnectionKey(pub u64);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuthEntry {
    pub user: String,
    pub since: Instant,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RejectReason {
    MissingHeader,
    MalformedHeader,
    BadCredentials,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AuthDecision {
    Authorized(String),
    /// Maps to HTTP 401; the request must not be processed.
    Reject401(RejectReason),
}

impl AuthDecision {
    pub fn is_authorized(&self) -> bool {
        matches!(self, Self::Authorized(_))
    }
}

#[derive(Debug, Default)]
pub struct ConnectionAuthCache {
    entries: Mutex<HashMap<ConnectionKey, AuthEntry>>,
}

impl ConnectionAuthCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, conn: ConnectionKey) -> Option<AuthEntry> {
        self.entries.lock().unwrap().get(&conn).cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn evict_connection(&self, conn: ConnectionKey) {
        self.entries.lock().unwrap().remove(&conn);
    }
}

/// Decides whether a request may proceed. An already-authenticated
/// connection is accepted without looking at the header; otherwise a valid
/// header authenticates the connection for the rest of its lifetime.
pub fn authorize_request(
    cache: &ConnectionAuthCache,
    store: &CredentialStore,
    conn: ConnectionKey,
    header: Option<&str>,
) -> AuthDecision {
    if let Some(entry) = cache.get(conn) {
        return AuthDecision::Authorized(entry.user);
    }
    let Some(header) = header else {
        return AuthDecision::Reject401(RejectReason::MissingHeader);
    };
    let Ok((user, pass)) = decode_basic_header(header) else {
        tracing::debug!(conn = conn.0, "malformed authorization header");
        return AuthDecision::Reject401(RejectReason::MalformedHeader);
    };
    if !store.check_credentials(&user, &pass) {
        tracing::info!(conn = conn.0, user = %user, failures = store.failures(), "rejected credentials");
        return AuthDecision::Reject401(RejectReason::BadCredentials);
    }
    cache.entries.lock().unwrap().insert(
        conn,
        AuthEntry {
            user: user.clone(),
            since: Instant::now(),
        },
    );
    AuthDecision::Authorized(user)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Textbook base64, written out bit by bit.
    fn base64_oracle(input: &[u8]) -> String {
        const ALPHABET: &[u8; 64] =
            b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
        let mut bits: Vec<u8> = Vec::new();
        for byte in input {
            for i in (0..8).rev() {
                bits.push((byte >> i) & 1);
            }
        }
        let mut out = String::new();
        for chunk in bits.chunks(6) {
            let mut v = 0usize;
            for i in 0..6 {
                v = (v << 1) | *chunk.get(i).unwrap_or(&0) as usize;
            }
            out.push(ALPHABET[v] as char);
        }
        while !out.len().is_multiple_of(4) {
            out.push('=');
        }
        out
    }

    fn store() -> CredentialStore {
        CredentialStore::parse("# test users\nalice:s3cret\n\nbob:hunter2\n").unwrap()
    }

    #[test]
    fn oracle_self_check() {
        assert_eq!(base64_oracle(b"Man"), "TWFu");
        assert_eq!(base64_oracle(b"Ma"), "TWE=");
    }

    #[test]
    fn known_header_payload() {
        let expected = base64_oracle(b"alice:s3cret");
        assert_eq!(expected, "YWxpY2U6czNjcmV0");
        assert_eq!(encode_basic_header("alice", "s3cret"), format!("Basic {expected}"));
    }

    #[test]
    fn header_round_trip_simple() {
        let h = encode_basic_header("u", "p");
        assert_eq!(STANDARD.decode(h.strip_prefix("Basic ").unwrap()).unwrap(), b"u:p");
        assert_eq!(decode_basic_header(&h).unwrap(), ("u".into(), "p".into()));
    }

    #[test]
    fn malformed_headers() {
        assert!(matches!(decode_basic_header("Basic !!!"), Err(AuthError::MalformedHeader(_))));
        assert!(matches!(decode_basic_header("Bearer abc"), Err(AuthError::MalformedHeader(_))));
        assert!(matches!(decode_basic_header("Basic"), Err(AuthError::MalformedHeader(_))));
        let no_colon = format!("Basic {}", STANDARD.encode("nocolon"));
        assert!(matches!(decode_basic_header(&no_colon), Err(AuthError::MalformedHeader(_))));
    }

    #[test]
    fn check_credentials_cases() {
        let s = store();
        assert!(s.check_credentials("alice", "s3cret"));
        assert!(!s.check_credentials("alice", "wrong"));
        assert!(!s.check_credentials("", ""));
        assert!(!s.check_credentials("carol", "s3cret"));
        assert_eq!(s.verifications(), 4);
        assert_eq!(s.failures(), 3);
    }

    #[test]
    fn credential_file_errors() {
        assert!(CredentialStore::parse("nocolon").is_err());
        assert!(CredentialStore::parse("a:1\na:2").is_err());
        assert!(CredentialStore::parse(":x").is_err());
        assert!(CredentialStore::parse("a:b\tc").is_err());
        let s = CredentialStore::parse("  # only comments\n").unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn password_may_not_contain_colon() {
        let mut s = CredentialStore::new();
        assert_eq!(s.insert("a", "b:c"), Err(AuthError::InvalidField("password")));
        // file format splits on the first ':' so the remainder is the password
        assert!(CredentialStore::parse("a:b:c").is_err());
    }

    #[test]
    fn connection_level_caching() {
        let s = store();
        let cache = ConnectionAuthCache::new();
        let conn = ConnectionKey(7);
        let h = encode_basic_header("alice", "s3cret");
        assert_eq!(
            authorize_request(&cache, &s, conn, Some(&h)),
            AuthDecision::Authorized("alice".into())
        );
        assert_eq!(
            authorize_request(&cache, &s, conn, None),
            AuthDecision::Authorized("alice".into())
        );
        assert_eq!(s.verifications(), 1);
    }

    #[test]
    fn rejections_do_not_populate_cache() {
        let s = store();
        let cache = ConnectionAuthCache::new();
        let bad = encode_basic_header("alice", "nope");
        assert_eq!(
            authorize_request(&cache, &s, ConnectionKey(1), Some(&bad)),
            AuthDecision::Reject401(RejectReason::BadCredentials)
        );
        assert_eq!(
            authorize_request(&cache, &s, ConnectionKey(1), None),
            AuthDecision::Reject401(RejectReason::MissingHeader)
        );
        assert_eq!(
            authorize_request(&cache, &s, ConnectionKey(1), Some("Basic !!!")),
            AuthDecision::Reject401(RejectReason::MalformedHeader)
        );
        assert!(cache.is_empty());
    }

    #[test]
    fn eviction() {
        let s = store();
        let cache = ConnectionAuthCache::new();
        let conn = ConnectionKey(3);
        let h = encode_basic_header("bob", "hunter2");
        assert!(authorize_request(&cache, &s, conn, Some(&h)).is_authorized());
        cache.evict_connection(conn);
        assert!(!authorize_request(&cache, &s, conn, None).is_authorized());
        cache.evict_connection(ConnectionKey(999));
        assert!(authorize_request(&cache, &s, conn, Some(&h)).is_authorized());
    }

    proptest! {
        #[test]
        fn header_round_trip(user in "[^:\\p{Cc}]{0,24}", pass in "[^:\\p{Cc}]{0,24}") {
            let h = encode_basic_header(&user, &pass);
            prop_assert_eq!(h.strip_prefix("Basic ").unwrap(), base64_oracle(format!("{user}:{pass}").as_bytes()));
            prop_assert_eq!(decode_basic_header(&h).unwrap(), (user, pass));
        }

        // No connection is ever authorized without a successful check.
        #[test]
        fn cache_soundness(reqs in proptest::collection::vec((0u64..4, 0u8..3), 1..40)) {
            let s = store();
            let cache = ConnectionAuthCache::new();
            let mut good_seen = std::collections::HashSet::new();
            for (conn, kind) in reqs {
                let header = match kind {
                    0 => None,
                    1 => Some(encode_basic_header("alice", "bad")),
                    _ => Some(encode_basic_header("alice", "s3cret")),
                };
                let decision = authorize_request(&cache, &s, ConnectionKey(conn), header.as_deref());
                if kind == 2 { good_seen.insert(conn); }
                prop_assert_eq!(decision.is_authorized(), good_seen.contains(&conn));
            }
        }
    }
}
